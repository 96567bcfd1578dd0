//! Exact squared Euclidean distance transform over a cell lattice.
//!
//! Separable lower-envelope algorithm (Felzenszwalb & Huttenlocher) on integer
//! cell offsets, so results are exact integers.

/// Marker for "no seed reachable".
pub const FAR: u64 = u64::MAX / 4;

/// For every cell, the squared distance (in cell units) to the nearest seed
/// cell center. Cells with no seed anywhere get [`FAR`].
pub fn squared_edt(width: usize, height: usize, seeds: &[bool]) -> Vec<u64> {
    assert_eq!(seeds.len(), width * height);
    let mut out = vec![FAR; width * height];
    // columns
    let mut f = vec![0u64; height.max(width)];
    let mut d = vec![0u64; height.max(width)];
    let mut scratch = Envelope::new(height.max(width));
    for x in 0..width {
        for y in 0..height {
            f[y] = if seeds[y * width + x] { 0 } else { FAR };
        }
        scratch.transform(&f[..height], &mut d[..height]);
        for y in 0..height {
            out[y * width + x] = d[y];
        }
    }
    // rows
    for y in 0..height {
        let row = &mut out[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        scratch.transform(&f[..width], &mut d[..width]);
        row.copy_from_slice(&d[..width]);
    }
    out
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self {
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    /// 1D transform: `d[q] = min_p (q - p)^2 + f[p]`.
    fn transform(&mut self, f: &[u64], d: &mut [u64]) {
        let n = f.len();
        // only finite samples take part in the envelope
        let mut k: isize = -1;
        for q in 0..n {
            if f[q] >= FAR {
                continue;
            }
            loop {
                if k < 0 {
                    k = 0;
                    self.v[0] = q;
                    self.z[0] = f64::NEG_INFINITY;
                    self.z[1] = f64::INFINITY;
                    break;
                }
                let p = self.v[k as usize];
                let s = intersection(f, p, q);
                if s <= self.z[k as usize] {
                    k -= 1;
                    continue;
                }
                k += 1;
                self.v[k as usize] = q;
                self.z[k as usize] = s;
                self.z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
        if k < 0 {
            d.iter_mut().for_each(|x| *x = FAR);
            return;
        }
        let mut j = 0usize;
        for (q, out) in d.iter_mut().enumerate() {
            while self.z[j + 1] < q as f64 {
                j += 1;
            }
            let p = self.v[j];
            let dq = q.abs_diff(p) as u64;
            *out = dq * dq + f[p];
        }
    }
}

fn intersection(f: &[u64], p: usize, q: usize) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    ((f[q] as f64 + qf * qf) - (f[p] as f64 + pf * pf)) / (2.0 * (qf - pf))
}
