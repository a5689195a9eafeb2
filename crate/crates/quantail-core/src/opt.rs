//! Small derivative-free optimizers for the 2-3 dimensional fitting problems
//! in this crate. Objectives may return `f64::INFINITY` to encode infeasible
//! points; the optimizers treat such points as strictly worse than any finite
//! value and never propagate NaN.

/// Result of a Nelder-Mead run.
#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
}

/// Standard Nelder-Mead simplex minimization (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5). `step` sets the initial simplex edge per
/// coordinate. Deterministic: no randomness, fixed tie-breaking by index.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: &[f64], max_iter: usize, tol: f64) -> NmResult
where
    F: Fn(&[f64]) -> f64,
{
    let dim = x0.len();
    assert!(dim >= 1 && step.len() == dim);
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    for _ in 0..max_iter {
        // Order: best first. Stable sort keeps behavior deterministic on ties.
        let mut idx: Vec<usize> = (0..=dim).collect();
        idx.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap_or(std::cmp::Ordering::Equal));
        let reorder: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let fre: Vec<f64> = idx.iter().map(|&i| fv[i]).collect();
        simplex = reorder;
        fv = fre;

        let f_best = fv[0];
        let f_worst = fv[dim];
        let spread = if f_worst.is_finite() {
            (f_worst - f_best).abs()
        } else {
            f64::INFINITY
        };
        let size = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= tol && size <= tol {
            break;
        }

        // Centroid of all but worst.
        let mut cen = vec![0.0; dim];
        for v in &simplex[..dim] {
            for (c, x) in cen.iter_mut().zip(v) {
                *c += x;
            }
        }
        for c in cen.iter_mut() {
            *c /= dim as f64;
        }

        let worst = simplex[dim].clone();
        let lerp = |t: f64| -> Vec<f64> {
            cen.iter()
                .zip(&worst)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = lerp(1.0);
        let fr = eval(&xr);
        if fr < fv[0] {
            let xe = lerp(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[dim] = xe;
                fv[dim] = fe;
            } else {
                simplex[dim] = xr;
                fv[dim] = fr;
            }
        } else if fr < fv[dim - 1] {
            simplex[dim] = xr;
            fv[dim] = fr;
        } else {
            let xc = if fr < fv[dim] { lerp(0.5) } else { lerp(-0.5) };
            let fc = eval(&xc);
            if fc < fv[dim].min(fr) {
                simplex[dim] = xc;
                fv[dim] = fc;
            } else {
                // Shrink toward best.
                for i in 1..=dim {
                    let best = simplex[0].clone();
                    for (x, b) in simplex[i].iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    fv[i] = eval(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=dim {
        if fv[i] < fv[best] {
            best = i;
        }
    }
    NmResult {
        x: simplex[best].clone(),
        f: fv[best],
    }
}

/// Golden-section maximization of a unimodal `f` on `[lo, hi]`.
/// Returns (argmax, max). Infeasible regions should be kept outside the
/// bracket; `f` returning -inf inside it stalls progress toward that end.
pub fn golden_max<F>(f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}
