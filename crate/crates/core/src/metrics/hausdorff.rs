use crate::error::{Error, Result};
use crate::mask::Mask;

/// Boundary pixels: foreground with at least one 4-neighbour that is
/// background or off the grid.
pub fn boundary(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    Mask::from_fn(w, h, |x, y| {
        mask.is_fg(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.is_fg(x - 1, y)
                || !mask.is_fg(x + 1, y)
                || !mask.is_fg(x, y - 1)
                || !mask.is_fg(x, y + 1))
    })
}

/// One-dimensional squared distance transform of sampled function `f`
/// (lower envelope of parabolas). Infinite samples are not sites.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let meet = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for &q in &sites {
        while let Some(&p) = v.last() {
            let s = meet(q, p);
            if v.len() > 1 && s <= z[v.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if let Some(&p) = v.last() {
            z.push(meet(q, p));
        } else {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < i as f64 {
            k += 1;
        }
        let d = i as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest
/// foreground pixel of `sites` (infinite when `sites` is empty).
pub fn squared_distance_map(sites: &Mask) -> Vec<f64> {
    let (w, h) = (sites.width(), sites.height());
    let mut grid: Vec<f64> = sites
        .data()
        .iter()
        .map(|&v| if v != 0 { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; h];
    let mut res = vec![0.0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut res[..h]);
        for y in 0..h {
            grid[y * w + x] = res[y];
        }
    }
    for y in 0..h {
        let row = grid[y * w..(y + 1) * w].to_vec();
        edt_1d(&row, &mut grid[y * w..(y + 1) * w]);
    }
    grid
}

fn directed(from: &Mask, to_dist: &[f64]) -> f64 {
    from.data()
        .iter()
        .zip(to_dist)
        .filter(|(&v, _)| v != 0)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance in pixels between the boundaries of `pred`
/// and `truth`. An empty prediction is scored as the whole image.
pub fn hausdorff(pred: &Mask, truth: &Mask) -> Result<f64> {
    pred.ensure_same_dims(truth)?;
    if truth.is_empty() {
        return Err(Error::Data("Hausdorff distance needs a nonempty ground truth".into()));
    }
    let pred_b = if pred.is_empty() {
        boundary(&Mask::filled(pred.width(), pred.height()))
    } else {
        boundary(pred)
    };
    let truth_b = boundary(truth);
    let d_pred = squared_distance_map(&pred_b);
    let d_truth = squared_distance_map(&truth_b);
    Ok(directed(&pred_b, &d_truth).max(directed(&truth_b, &d_pred)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_sq(sites: &Mask) -> Vec<f64> {
        let (w, h) = (sites.width(), sites.height());
        let pts: Vec<(i64, i64)> = (0..w * h)
            .filter(|&i| sites.data()[i] != 0)
            .map(|i| ((i % w) as i64, (i / w) as i64))
            .collect();
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                pts.iter()
                    .map(|&(px, py)| ((px - x).pow(2) + (py - y).pow(2)) as f64)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_pixels_three_four_five() {
        let a = Mask::from_fn(6, 6, |x, y| x == 0 && y == 0);
        let b = Mask::from_fn(6, 6, |x, y| x == 3 && y == 4);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(hausdorff(&b, &a).unwrap(), 5.0);
    }

    #[test]
    fn identical_shapes_are_zero_apart() {
        let m = Mask::from_fn(9, 7, |x, y| (2..7).contains(&x) && (1..5).contains(&y));
        assert_eq!(hausdorff(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let b = boundary(&Mask::filled(4, 4));
        assert_eq!(b.area(), 12);
        assert!(!b.is_fg(1, 1) && !b.is_fg(2, 2));
    }

    #[test]
    fn empty_prediction_falls_back_to_the_image_border() {
        let truth = Mask::from_fn(5, 5, |x, y| x == 2 && y == 2);
        // farthest border pixel from the centre is a corner
        assert_eq!(hausdorff(&Mask::new(5, 5), &truth).unwrap(), 8f64.sqrt());
    }

    #[test]
    fn empty_truth_is_an_error() {
        let m = Mask::filled(3, 3);
        assert!(matches!(hausdorff(&m, &Mask::new(3, 3)), Err(Error::Data(_))));
        assert!(matches!(hausdorff(&m, &Mask::new(3, 4)), Err(Error::Dimension { .. })));
    }

    fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop::bool::weighted(0.3), w * h)
                .prop_map(move |v| Mask::from_vec(w, h, v.into_iter().map(u8::from).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn distance_map_matches_brute_force(m in mask_strategy(16)) {
            prop_assert_eq!(squared_distance_map(&m), brute_sq(&m));
        }

        #[test]
        fn symmetric_and_triangle(a in mask_strategy(12)) {
            let (w, h) = (a.width(), a.height());
            let b = Mask::from_fn(w, h, |x, y| (x * 7 + y * 3) % 5 == 0);
            let c = Mask::from_fn(w, h, |x, y| x + y == w.min(h) - 1);
            prop_assume!(!a.is_empty() && !b.is_empty() && !c.is_empty());
            let ab = hausdorff(&a, &b).unwrap();
            prop_assert_eq!(ab, hausdorff(&b, &a).unwrap());
            let ac = hausdorff(&a, &c).unwrap();
            let cb = hausdorff(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }
}
