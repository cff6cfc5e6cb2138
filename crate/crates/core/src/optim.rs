//! Derivative-free building blocks: box-clamped Nelder–Mead, golden-section
//! line search and Latin-hypercube start points.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::ParamBox;

#[derive(Debug, Clone)]
pub(crate) struct NmOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

/// Nelder–Mead with standard coefficients. Every trial point is clamped into
/// `bounds`; stops when the largest vertex distance from the best vertex
/// drops below `tol` or after `max_evals` evaluations.
pub(crate) fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    start: &[f64],
    bounds: &ParamBox,
    max_evals: usize,
    tol: f64,
) -> NmOutcome {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let p = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &mut Vec<f64>, evals: &mut usize| -> f64 {
        bounds.clamp_in_place(x);
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(p + 1);
    let mut x0 = start.to_vec();
    let f0 = eval(&mut x0, &mut evals);
    simplex.push((x0.clone(), f0));
    for j in 0..p {
        let (lo, hi) = (bounds.lower()[j], bounds.upper()[j]);
        let mut step = 0.1 * (hi - lo);
        if step == 0.0 {
            step = 0.1 * x0[j].abs().max(1.0);
        }
        if x0[j] + step > hi && x0[j] - step >= lo {
            step = -step;
        }
        let mut v = x0.clone();
        v[j] += step;
        let fv = eval(&mut v, &mut evals);
        simplex.push((v, fv));
    }

    let sort = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex_cmp(&a.0, &b.0)));
    };
    let diameter = |s: &Vec<(Vec<f64>, f64)>| {
        s[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&s[0].0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };

    let mut converged = false;
    loop {
        sort(&mut simplex);
        if diameter(&simplex) < tol {
            converged = true;
            break;
        }
        if evals >= max_evals {
            break;
        }
        let mut centroid = vec![0.0; p];
        for (v, _) in &simplex[..p] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / p as f64;
            }
        }
        let worst = simplex[p].clone();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let mut xr = along(REFLECT);
        let fr = eval(&mut xr, &mut evals);
        if fr < simplex[0].1 {
            let mut xe = along(EXPAND);
            let fe = eval(&mut xe, &mut evals);
            simplex[p] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[p - 1].1 {
            simplex[p] = (xr, fr);
            continue;
        }
        let (mut xc, fc) = if fr < worst.1 {
            let mut xc = along(CONTRACT);
            let fc = eval(&mut xc, &mut evals);
            (xc, fc)
        } else {
            let mut xc = along(-CONTRACT);
            let fc = eval(&mut xc, &mut evals);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            bounds.clamp_in_place(&mut xc);
            simplex[p] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, x)| b + SHRINK * (x - b))
                .collect();
            let fv = eval(&mut v, &mut evals);
            *vertex = (v, fv);
        }
    }
    let (x, value) = simplex.swap_remove(0);
    NmOutcome {
        x,
        value,
        converged,
    }
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Golden-section search on `[a, b]`. Both endpoints are evaluated too, and
/// the best of all evaluated points is returned as `(x, f(x), evals)`.
pub(crate) fn golden_section(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64, usize) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut best = (lo, f(lo));
    let mut evals = 1;
    let fhi = f(hi);
    evals += 1;
    if fhi < best.1 {
        best = (hi, fhi);
    }
    if hi - lo <= tol {
        return (best.0, best.1, evals);
    }
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    evals += 2;
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
        evals += 1;
        if evals > 500 {
            break;
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    (best.0, best.1, evals)
}

/// `n` points of a Latin hypercube over `bounds`.
pub(crate) fn latin_hypercube<R: Rng + ?Sized>(bounds: &ParamBox, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let p = bounds.dim();
    let mut points = vec![vec![0.0; p]; n];
    for j in 0..p {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        let (lo, hi) = (bounds.lower()[j], bounds.upper()[j]);
        for (i, s) in strata.into_iter().enumerate() {
            let u: f64 = rng.gen();
            points[i][j] = lo + (hi - lo) * (s as f64 + u) / n as f64;
        }
    }
    points
}
