use super::params::{Grads, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function of `store` to central
/// differences, one coordinate at a time. Returns the largest
/// `|g_a − g_n| / max(τ, |g_a| + |g_n|)` where `τ = 1e-7 · max(1, |f|)` is the
/// level below which finite differences of `f` are dominated by rounding.
pub fn grad_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    Ok(grad_check_report(store, eps, f)?.max_rel_error)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

pub fn grad_check_report<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };

    let mut grads = Grads::zeros_like(store);
    let base = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        tape.backward(out, &mut grads)?;
        tape.scalar(out)
    };
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {base} vs {again}"
        )));
    }

    let floor = 1e-7 * base.abs().max(1.0);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for id in store.ids() {
        let n = store.get(id).len();
        let analytic = grads.get(id).expect("allocated").values().to_vec();
        for k in 0..n {
            let orig = store.get(id).values()[k];
            work.get_mut(id).values_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).values_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).values_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k];
            let err = (a - numeric).abs() / f64::max(floor, a.abs() + numeric.abs());
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::{Activation, LstmCell, Mlp, MlpSpec};
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParamStore::new();
        let w = store
            .register("w", Tensor::new(vec![1, 3], vec![0.3, -0.1, 2.0]).unwrap())
            .unwrap();
        let err = grad_check(&store, 1e-5, |t| {
            let x = t.constant(vec![1.0, 2.0, -0.5]);
            t.linear(w, None, x)
        })
        .unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let store = ParamStore::new();
        assert!(grad_check(&store, 1e-2, |t| Ok(t.constant(vec![0.0]))).is_err());
    }

    #[test]
    fn nondeterministic_function_detected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::from_vec(vec![1.0])).unwrap();
        let calls = Cell::new(0.0);
        let res = grad_check(&store, 1e-5, |t| {
            calls.set(calls.get() + 1.0);
            Ok(t.constant(vec![calls.get()]))
        });
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn lstm_step_squared_loss_over_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = rng.random_range(1..=8);
            let hidden = rng.random_range(1..=8);
            let mut store = ParamStore::new();
            let cell = LstmCell::new(&mut store, "lstm", input, hidden, &mut rng).unwrap();
            let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h0: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c0: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = grad_check(&store, 1e-5, |t| {
                let st = crate::numerics::LstmState {
                    h: t.constant(h0.clone()),
                    c: t.constant(c0.clone()),
                };
                let xv = t.constant(x.clone());
                let s1 = cell.step(t, st, xv)?;
                let s2 = cell.step(t, s1, xv)?;
                let both = t.concat(&[s2.h, s2.c]);
                let sq = t.square(both);
                Ok(t.sum(sq))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: err = {err}");
        }
    }

    #[test]
    fn composite_ops_over_seeds() {
        // exercises every tape op at least once
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut store = ParamStore::new();
            let spec = MlpSpec::uniform(5, 6, 4, 3, Activation::Tanh, Activation::Identity);
            let mlp = Mlp::new(&mut store, "m", &spec, &mut rng).unwrap();
            let emb = store.register_uniform("emb", &[3, 5], 1, &mut rng).unwrap();
            let v = store.register_uniform("v", &[4], 4, &mut rng).unwrap();
            let rows: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask: Vec<f64> = (0..4).map(|i| (i % 2) as f64 * 2.0).collect();
            let err = grad_check(&store, 1e-5, |t| {
                let e0 = t.embed(emb, 0);
                let e2 = t.embed(emb, 2);
                let x = t.mean(&[e0, e2]);
                let y = mlp.apply(t, x)?;
                let pv = t.param(v);
                let z = t.mul(y, pv);
                let z = t.add(z, y);
                let z = t.sub(z, pv);
                let z = t.scale(z, 0.7);
                let z = t.add_const(z, &[0.1, 0.2, 0.3, 0.4]);
                let s = t.sigmoid(z);
                let r = t.relu(y);
                let m = t.mul_const(s, mask.clone());
                let cat = t.concat(&[m, r]);
                let sl = t.slice(cat, 2, 4);
                let sm = t.softmax(sl);
                let mixed = t.mix_rows(sm, &rows, 3);
                let ls = t.log_softmax(y);
                let pick = t.pick(ls, 1);
                let d = t.dot(s, pv);
                let ex = t.exp(d);
                let sq = t.square(mixed);
                let tot = t.sum(sq);
                Ok(t.sum_scalars(&[tot, pick, ex]))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: err = {err}");
        }
    }
}
