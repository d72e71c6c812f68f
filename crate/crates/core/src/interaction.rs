//! Role-selected interaction layer.
//!
//! Two task-specific dense projections turn the shared rows into `H'`
//! (handoff) and `S'` (satisfaction). SSA→MHCH attends from each handoff row
//! to strictly-past customer rows of `S'`; MHCH→SSA attends from each
//! satisfaction row to past-or-current handoff rows, with scores reweighted by
//! the positional matrix `Γ`.

use rand::RngCore;

use crate::config::InteractionMode;
use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::layers::{Linear, Norm};
use crate::numerics::{masked_softmax, Activation, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct InteractionParams {
    pub handoff_proj: Linear,
    pub satisfaction_proj: Linear,
    pub fusion: Linear,
    pub norm: Norm,
}

impl InteractionParams {
    pub fn register(
        store: &mut ParamStore,
        shared_width: usize,
        dense: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(InteractionParams {
            handoff_proj: Linear::register(store, "interaction.handoff_proj", shared_width, dense, rng)?,
            satisfaction_proj: Linear::register(store, "interaction.satisfaction_proj", shared_width, dense, rng)?,
            fusion: Linear::register(store, "interaction.fusion", 2 * dense, dense, rng)?,
            norm: Norm::register(store, "interaction.norm", dense)?,
        })
    }
}

/// `H' = act(H W_h + b_h)`, `S' = act(S W_s + b_s)`.
pub fn task_projections(
    g: &mut Graph,
    h: Var,
    s: Var,
    params: &InteractionParams,
    act: Activation,
) -> Result<(Var, Var)> {
    let width = g.store().get(params.handoff_proj.weight).rows();
    if g.shape(h)[1] != width || g.shape(s) != g.shape(h) {
        return Err(Error::contract(format!(
            "task_projections: H {:?} / S {:?}, expected width {width}",
            g.shape(h),
            g.shape(s)
        )));
    }
    let hp = params.handoff_proj.forward(g, h);
    let hp = g.activate(hp, act);
    let sp = params.satisfaction_proj.forward(g, s);
    let sp = g.activate(sp, act);
    Ok((hp, sp))
}

/// Allowed keys for SSA→MHCH: `j < t`, and `roles[j]` is the customer when `select`.
pub fn customer_past_mask(roles: &[Role], select: bool) -> Vec<bool> {
    let l = roles.len();
    let mut mask = vec![false; l * l];
    for t in 0..l {
        for j in 0..t {
            mask[t * l + j] = !select || roles[j] == Role::Customer;
        }
    }
    mask
}

/// Allowed keys `j ≤ t`.
pub fn past_inclusive_mask(l: usize) -> Vec<bool> {
    let mut mask = vec![false; l * l];
    for t in 0..l {
        for j in 0..=t {
            mask[t * l + j] = true;
        }
    }
    mask
}

/// SSA→MHCH: returns `(M, α^s)`.
pub fn ssa_to_mhch(
    g: &mut Graph,
    hp: Var,
    sp: Var,
    roles: &[Role],
    params: &InteractionParams,
    act: Activation,
    select: bool,
) -> Result<(Var, Var)> {
    let [l, _] = g.shape(hp);
    if roles.len() != l || g.shape(sp) != g.shape(hp) {
        return Err(Error::contract(format!(
            "ssa_to_mhch: {} roles for H' {:?} and S' {:?}",
            roles.len(),
            g.shape(hp),
            g.shape(sp)
        )));
    }
    let scores = g.matmul_bt(hp, sp);
    let alpha = g.masked_softmax(scores, customer_past_mask(roles, select));
    let context = g.matmul(alpha, sp);
    let joined = g.concat_cols(&[context, hp]);
    let m = params.fusion.forward(g, joined);
    Ok((g.activate(m, act), alpha))
}

/// `β_t` for 1-based `t`: softmax of `(1/L, …, t/L)` over positions `1..=t`, zero beyond.
pub fn positional_weights(l: usize, t: usize) -> Result<Vec<f64>> {
    if t == 0 || t > l {
        return Err(Error::contract(format!(
            "positional_weights: t = {t} outside 1..={l}"
        )));
    }
    let scores: Vec<f64> = (1..=l).map(|j| j as f64 / l as f64).collect();
    let allowed: Vec<bool> = (1..=l).map(|j| j <= t).collect();
    masked_softmax(&scores, &allowed)
}

/// `Γ = [β_1; …; β_L]`.
pub fn positional_matrix(l: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (1..=l)
        .map(|t| positional_weights(l, t).expect("t in range"))
        .collect();
    Tensor::from_rows(&rows).expect("square")
}

/// MHCH→SSA: returns `(Q, α^m)` with `Q = LayerNorm(α^m H' + S')`.
pub fn mhch_to_ssa(
    g: &mut Graph,
    sp: Var,
    hp: Var,
    gamma: Tensor,
    params: &InteractionParams,
) -> Result<(Var, Var)> {
    let [l, _] = g.shape(sp);
    if g.shape(hp) != g.shape(sp) || gamma.shape() != [l, l] {
        return Err(Error::contract(format!(
            "mhch_to_ssa: S' {:?}, H' {:?}, Γ {:?}",
            g.shape(sp),
            g.shape(hp),
            gamma.shape()
        )));
    }
    let raw = g.matmul_bt(sp, hp);
    let gamma = g.input(gamma);
    let scores = g.matmul(raw, gamma);
    let alpha = g.masked_softmax(scores, past_inclusive_mask(l));
    let attended = g.matmul(alpha, hp);
    let residual = g.add(attended, sp);
    Ok((params.norm.forward(g, residual), alpha))
}

/// Nodes produced by [`interact`].
#[derive(Clone, Debug)]
pub struct InteractionOutput {
    pub h_proj: Var,
    pub s_proj: Var,
    pub m: Var,
    pub q: Var,
    pub alpha_s: Option<Var>,
    pub alpha_m: Option<Var>,
    pub gamma: Option<Tensor>,
}

pub fn interact(
    g: &mut Graph,
    h: Var,
    s: Var,
    roles: &[Role],
    params: &InteractionParams,
    act: Activation,
    mode: InteractionMode,
) -> Result<InteractionOutput> {
    let (hp, sp) = task_projections(g, h, s, params, act)?;
    if mode == InteractionMode::NoInteract {
        if roles.len() != g.shape(hp)[0] {
            return Err(Error::contract("interact: role count differs from dialogue length"));
        }
        return Ok(InteractionOutput {
            h_proj: hp,
            s_proj: sp,
            m: hp,
            q: sp,
            alpha_s: None,
            alpha_m: None,
            gamma: None,
        });
    }
    let select = mode != InteractionMode::NoSelect;
    let (m, alpha_s) = ssa_to_mhch(g, hp, sp, roles, params, act, select)?;
    let l = roles.len();
    let gamma = if mode == InteractionMode::NoPosition {
        Tensor::identity(l)
    } else {
        positional_matrix(l)
    };
    let (q, alpha_m) = mhch_to_ssa(g, sp, hp, gamma.clone(), params)?;
    Ok(InteractionOutput {
        h_proj: hp,
        s_proj: sp,
        m,
        q,
        alpha_s: Some(alpha_s),
        alpha_m: Some(alpha_m),
        gamma: Some(gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(width: usize, d: usize) -> (ParamStore, InteractionParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        let p = InteractionParams::register(&mut store, width, d, &mut rng).unwrap();
        (store, p)
    }

    #[test]
    fn positional_examples() {
        assert_eq!(positional_weights(3, 1).unwrap(), vec![1.0, 0.0, 0.0]);
        let b = positional_weights(3, 2).unwrap();
        let (e1, e2) = ((1.0f64 / 3.0).exp(), (2.0f64 / 3.0).exp());
        assert!((b[0] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((b[0] - 0.4174).abs() < 5e-5 && (b[1] - 0.5826).abs() < 5e-5);
        assert_eq!(b[2], 0.0);
        assert!(positional_weights(3, 0).is_err());
        assert!(positional_weights(3, 4).is_err());
    }

    #[test]
    fn zero_projection_is_zero() {
        let (mut store, p) = setup(5, 3);
        store.get_mut(p.handoff_proj.weight).data_mut().fill(0.0);
        store.get_mut(p.satisfaction_proj.weight).data_mut().fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new(&store);
        let h = g.input(random(&mut rng, 4, 5));
        let (hp, sp) = task_projections(&mut g, h, h, &p, Activation::Relu).unwrap();
        assert!(g.value(hp).data().iter().all(|v| *v == 0.0));
        assert!(g.value(sp).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_block_passes_nonnegative_input() {
        let (mut store, p) = setup(5, 3);
        let mut w = Tensor::zeros(5, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        *store.get_mut(p.handoff_proj.weight) = w;
        let mut g = Graph::new(&store);
        let x = Tensor::from_rows(&[vec![0.5, 2.0, 0.0, 7.0, 1.0], vec![1.0, 0.25, 3.0, 0.0, 0.0]]).unwrap();
        let h = g.input(x.clone());
        let (hp, sp) = task_projections(&mut g, h, h, &p, Activation::Relu).unwrap();
        assert_eq!(g.value(hp).row(0), &x.row(0)[..3]);
        assert_eq!(g.value(hp).row(1), &x.row(1)[..3]);
        assert_ne!(g.value(hp), g.value(sp));
        let bad = g.input(Tensor::zeros(2, 4));
        assert!(task_projections(&mut g, bad, bad, &p, Activation::Relu).is_err());
    }

    #[test]
    fn single_customer_candidate_gets_all_mass() {
        let (store, p) = setup(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new(&store);
        let hp = g.input(random(&mut rng, 3, 3));
        let sp = g.input(random(&mut rng, 3, 3));
        let roles = [Role::Agent, Role::Customer, Role::Agent];
        let (_, a) = ssa_to_mhch(&mut g, hp, sp, &roles, &p, Activation::Relu, true).unwrap();
        let a = g.value(a);
        assert_eq!(a.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(a.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(a.row(2), &[0.0, 1.0, 0.0]);
        assert!(ssa_to_mhch(&mut g, hp, sp, &roles[..2], &p, Activation::Relu, true).is_err());
    }

    #[test]
    fn no_select_reaches_agents() {
        let (store, p) = setup(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new(&store);
        let hp = g.input(random(&mut rng, 4, 3));
        let sp = g.input(random(&mut rng, 4, 3));
        let roles = [Role::Customer, Role::Agent, Role::Customer, Role::Agent];
        let (_, a) = ssa_to_mhch(&mut g, hp, sp, &roles, &p, Activation::Relu, false).unwrap();
        assert!(g.value(a).get(3, 1) > 0.0);
    }

    #[test]
    fn single_position_modes() {
        let (store, p) = setup(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new(&store);
        let h = g.input(random(&mut rng, 1, 4));
        let roles = [Role::Customer];
        let full = interact(&mut g, h, h, &roles, &p, Activation::Relu, InteractionMode::Full).unwrap();
        let nopos = interact(&mut g, h, h, &roles, &p, Activation::Relu, InteractionMode::NoPosition).unwrap();
        assert_eq!(g.value(full.q), g.value(nopos.q));
        assert_eq!(g.value(full.alpha_m.unwrap()).data(), &[1.0]);

        let none = interact(&mut g, h, h, &roles, &p, Activation::Relu, InteractionMode::NoInteract).unwrap();
        assert_eq!(g.value(none.m), g.value(none.h_proj));
        assert_eq!(g.value(none.q), g.value(none.s_proj));
    }

    #[test]
    fn residual_path_with_zero_handoff_rows() {
        let (store, p) = setup(4, 3);
        let mut g = Graph::new(&store);
        let hp = g.input(Tensor::zeros(1, 3));
        let s = Tensor::row_vector(vec![0.3, -1.2, 2.0]);
        let sp = g.input(s.clone());
        let (q, _) = mhch_to_ssa(&mut g, sp, hp, Tensor::identity(1), &p).unwrap();
        let expected = crate::numerics::layer_norm(s.data(), &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(g.value(q).data(), expected.as_slice());
    }
}
