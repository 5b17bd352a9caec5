//! Exact Euclidean distance transform (Felzenszwalb & Huttenlocher).

use ndarray::Array2;

const INF: f64 = 1e20;

/// Squared 1D distance transform of `f` by lower envelope of parabolas.
/// Entries equal to `INF` contribute no parabola; at least one entry must be
/// finite.
fn transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k: isize = -1;
    for (q, &fq) in f.iter().enumerate() {
        if fq >= INF {
            continue;
        }
        let mut s = -INF;
        while k >= 0 {
            let p = v[k as usize];
            s = ((fq + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k as usize] {
                k -= 1;
            } else {
                break;
            }
        }
        if k < 0 {
            s = -INF;
        }
        k += 1;
        v[k as usize] = q;
        z[k as usize] = s;
        z[k as usize + 1] = INF;
    }
    debug_assert!(k >= 0, "transform_1d needs a finite entry");
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        *o = d * d + f[v[j]];
    }
}

/// Distance from every `true` pixel to the nearest `false` pixel, with
/// everything outside the grid counting as `false`. `false` pixels map to 0.
pub fn interior_distance(inside: &Array2<bool>) -> Array2<f64> {
    let (h, w) = inside.dim();
    let (ph, pw) = (h + 2, w + 2);
    let mut grid = Array2::<f64>::zeros((ph, pw));
    for ((r, c), &v) in inside.indexed_iter() {
        if v {
            grid[[r + 1, c + 1]] = INF;
        }
    }

    let n = ph.max(pw);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for c in 0..pw {
        for r in 0..ph {
            f[r] = grid[[r, c]];
        }
        transform_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for r in 0..ph {
            grid[[r, c]] = out[r];
        }
    }
    for r in 0..ph {
        for c in 0..pw {
            f[c] = grid[[r, c]];
        }
        transform_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        for c in 0..pw {
            grid[[r, c]] = out[c];
        }
    }

    Array2::from_shape_fn((h, w), |(r, c)| grid[[r + 1, c + 1]].sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(inside: &Array2<bool>) -> Array2<f64> {
        let (h, w) = inside.dim();
        Array2::from_shape_fn((h, w), |(r, c)| {
            if !inside[[r, c]] {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for rr in -1..=h as isize {
                for cc in -1..=w as isize {
                    let outside = rr < 0
                        || cc < 0
                        || rr >= h as isize
                        || cc >= w as isize
                        || !inside[[rr as usize, cc as usize]];
                    if outside {
                        let d = ((rr - r as isize).pow(2) + (cc - c as isize).pow(2)) as f64;
                        best = best.min(d.sqrt());
                    }
                }
            }
            best
        })
    }

    #[test]
    fn square_interior() {
        let mut m = Array2::from_elem((7, 7), false);
        for r in 1..6 {
            for c in 1..6 {
                m[[r, c]] = true;
            }
        }
        let d = interior_distance(&m);
        assert_eq!(d[[0, 0]], 0.0);
        assert_eq!(d[[1, 1]], 1.0);
        assert_eq!(d[[3, 3]], 3.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(bits in proptest::collection::vec(any::<bool>(), 9 * 11)) {
            let m = Array2::from_shape_vec((9, 11), bits).unwrap();
            let fast = interior_distance(&m);
            let slow = brute_force(&m);
            for (a, b) in fast.iter().zip(slow.iter()) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
