//! Derivative-free simplex minimization.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Offset of the initial simplex vertices along each coordinate.
    pub initial_step: f64,
    /// Maximum number of objective evaluations, including the start point.
    pub max_evaluations: usize,
    /// Stop once the spread of objective values over the simplex falls below this.
    pub tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { initial_step: 1.0, max_evaluations: 200, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Budgeted<F> {
    f: F,
    used: usize,
    limit: usize,
}

impl<F: FnMut(&[f64]) -> f64> Budgeted<F> {
    fn call(&mut self, x: &[f64]) -> Option<f64> {
        if self.used >= self.limit {
            return None;
        }
        self.used += 1;
        let v = (self.f)(x);
        Some(if v.is_nan() { f64::INFINITY } else { v })
    }
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b − a)
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as `+∞`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], options: &NelderMeadOptions) -> NelderMeadResult {
    let mut fun = Budgeted { f, used: 0, limit: options.max_evaluations.max(1) };
    let dim = x0.len();
    let f0 = fun.call(x0).expect("budget allows the start point");
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    let finish = |simplex: &mut Vec<(Vec<f64>, f64)>, used, converged| {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        NelderMeadResult { x: simplex[0].0.clone(), value: simplex[0].1, evaluations: used, converged }
    };
    if dim == 0 {
        return finish(&mut simplex, fun.used, true);
    }
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += options.initial_step;
        match fun.call(&x) {
            Some(v) => simplex.push((x, v)),
            None => return finish(&mut simplex, fun.used, false),
        }
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if best.is_finite() && worst - best < options.tolerance {
            return finish(&mut simplex, fun.used, true);
        }
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let second_worst = simplex[dim - 1].1;
        let xr = affine(&centroid, &simplex[dim].0, -REFLECTION);
        let Some(fr) = fun.call(&xr) else { return finish(&mut simplex, fun.used, false) };
        if fr < best {
            let xe = affine(&centroid, &simplex[dim].0, -EXPANSION);
            let Some(fe) = fun.call(&xe) else {
                simplex[dim] = (xr, fr);
                return finish(&mut simplex, fun.used, false);
            };
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < second_worst {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, accept_below) = if fr < worst {
            (affine(&centroid, &xr, CONTRACTION), fr)
        } else {
            (affine(&centroid, &simplex[dim].0, CONTRACTION), worst)
        };
        let Some(fc) = fun.call(&xc) else { return finish(&mut simplex, fun.used, false) };
        if fc < accept_below || (fc <= accept_below && fr < worst) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = affine(&anchor, &vertex.0, SHRINK);
            match fun.call(&x) {
                Some(v) => *vertex = (x, v),
                None => return finish(&mut simplex, fun.used, false),
            }
        }
    }
}
