//! Learned relation modules comparing a query with a class prototype.
//!
//! * base: `⟨w, M₂ · relu(M₁ · [v; p])⟩`, a two-layer feed-forward
//!   network over the concatenated pair (row-vector convention, so the
//!   code computes `relu([v; p] M₁) M₂ w`).
//! * NTL: `⟨w, relu(vᵀ M_t p for t in 1..h)⟩`, a stack of `h` bilinear
//!   forms.

use rand::Rng;

use super::{probabilities, proto, Parameters, QuerySet, ScoreMatrix, SupportSet};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RelationBaseParams {
    /// `[2d, h_b]`
    pub m1: Tensor,
    /// `[h_b, h_b]`
    pub m2: Tensor,
    /// `[h_b]`
    pub w: Tensor,
}

impl RelationBaseParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            m1: Tensor::glorot(vec![2 * dim, hidden], rng),
            m2: Tensor::glorot(vec![hidden, hidden], rng),
            w: Tensor::zeros(vec![hidden]),
        }
    }

    pub fn new(m1: Tensor, m2: Tensor, w: Tensor) -> Result<Self> {
        let p = Self { m1, m2, w };
        p.check()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.m1.shape()[0] / 2
    }

    fn check(&self) -> Result<()> {
        let (s1, s2, sw) = (self.m1.shape(), self.m2.shape(), self.w.shape());
        let ok = s1.len() == 2
            && s1[0] % 2 == 0
            && s2.len() == 2
            && s2[0] == s1[1]
            && sw.len() == 1
            && sw[0] == s2[1];
        if !ok {
            return Err(Error::Config(format!(
                "relation module shapes do not chain: M1 {s1:?}, M2 {s2:?}, w {sw:?}"
            )));
        }
        Ok(())
    }
}

impl Parameters for RelationBaseParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.m1, &self.m2, &self.w]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.m1, &mut self.m2, &mut self.w]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RelationBaseVars {
    pub m1: Var,
    pub m2: Var,
    pub w: Var,
}

impl RelationBaseVars {
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            m1: v[0],
            m2: v[1],
            w: v[2],
        }
    }
}

/// Row-major list of every (query, prototype) index pair.
fn pair_indices(n: usize, c: usize) -> (Vec<usize>, Vec<usize>) {
    let qi = (0..n).flat_map(|i| std::iter::repeat_n(i, c)).collect();
    let pi = (0..n).flat_map(|_| 0..c).collect();
    (qi, pi)
}

/// Raw relation scores `[N, C]` for queries `[N, d]` and prototypes `[C, d]`.
pub fn relation_base_forward(
    g: &mut Graph,
    vars: &RelationBaseVars,
    query: Var,
    protos: Var,
) -> Result<Var> {
    let (n, c) = (g.shape(query)[0], g.shape(protos)[0]);
    let hidden = g.shape(vars.w)[0];
    let (qi, pi) = pair_indices(n, c);
    let qs = g.gather_rows(query, &qi)?;
    let ps = g.gather_rows(protos, &pi)?;
    let pairs = g.concat_cols(qs, ps)?;
    let h1 = g.matmul(pairs, vars.m1)?;
    let h1 = g.relu(h1);
    let h2 = g.matmul(h1, vars.m2)?;
    let w = g.reshape(vars.w, &[hidden, 1])?;
    let s = g.matmul(h2, w)?;
    g.reshape(s, &[n, c])
}

/// Softmax-normalised relation scores against class-mean prototypes.
pub fn relation_base_scores(
    s: &SupportSet,
    q: &QuerySet,
    params: &RelationBaseParams,
) -> Result<ScoreMatrix> {
    params.check()?;
    if params.dim() != q.dim() || s.dim() != q.dim() {
        return Err(Error::Config(format!(
            "relation module expects d={}, episode has d={}",
            params.dim(),
            q.dim()
        )));
    }
    let mut g = Graph::new();
    let vars = RelationBaseVars::from_slice(&params.bind_all(&mut g, false));
    let sv = g.constant(&s.as_matrix());
    let qv = g.constant(q.vectors());
    let p = proto::prototypes(&mut g, sv, s.ways(), s.shots())?;
    let raw = relation_base_forward(&mut g, &vars, qv, p)?;
    Ok(probabilities(&mut g, raw))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtlParams {
    /// `[h, d, d]`
    pub m: Tensor,
    /// `[h]`
    pub w: Tensor,
}

impl NtlParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, slices: usize, rng: &mut R) -> Self {
        Self {
            m: Tensor::glorot(vec![slices, dim, dim], rng),
            w: Tensor::zeros(vec![slices]),
        }
    }

    pub fn new(m: Tensor, w: Tensor) -> Result<Self> {
        let ok = matches!(m.shape(), [h, a, b] if a == b && w.shape() == [*h]);
        if !ok {
            return Err(Error::Config(format!(
                "NTL shapes disagree: M {:?}, w {:?}",
                m.shape(),
                w.shape()
            )));
        }
        Ok(Self { m, w })
    }

    pub fn slices(&self) -> usize {
        self.m.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.m.shape()[1]
    }
}

impl Parameters for NtlParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.m, &self.w]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.m, &mut self.w]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NtlVars {
    pub m: Var,
    pub w: Var,
}

impl NtlVars {
    pub fn from_slice(v: &[Var]) -> Self {
        Self { m: v[0], w: v[1] }
    }
}

/// Raw NTL scores `[N, C]` for queries `[N, d]` and prototypes `[C, d]`.
///
/// All `h` bilinear forms are evaluated with two matrix products:
/// `Q · M'` with `M'` the `[d, h·d]` rearrangement of the slice stack,
/// then a product with `Pᵀ`.
pub fn ntl_forward(g: &mut Graph, vars: &NtlVars, query: Var, protos: Var) -> Result<Var> {
    let (n, d) = (g.shape(query)[0], g.shape(query)[1]);
    let c = g.shape(protos)[0];
    let h = g.shape(vars.m)[0];
    if g.shape(vars.m) != [h, d, d] {
        return Err(Error::shape("ntl", g.shape(vars.m), &[h, d, d]));
    }
    let m = g.swap_axes(vars.m)?; // [d, h, d]
    let m = g.reshape(m, &[d, h * d])?;
    let t = g.matmul(query, m)?; // [N, h·d]
    let t = g.reshape(t, &[n * h, d])?;
    let pt = g.transpose(protos)?;
    let z = g.matmul(t, pt)?; // [N·h, C]
    let z = g.relu(z);
    let z = g.reshape(z, &[n, h, c])?;
    let z = g.swap_axes(z)?; // [h, N, C]
    let z = g.reshape(z, &[h, n * c])?;
    let w = g.reshape(vars.w, &[1, h])?;
    let s = g.matmul(w, z)?;
    g.reshape(s, &[n, c])
}

/// Score of a single (query, prototype) pair.
pub fn ntl_scores(v: &[f64], p: &[f64], params: &NtlParams) -> Result<f64> {
    let d = params.dim();
    if v.len() != d || p.len() != d {
        return Err(Error::shape("ntl_scores", &[v.len(), p.len()], &[d, d]));
    }
    let mut g = Graph::new();
    let vars = NtlVars::from_slice(&params.bind_all(&mut g, false));
    let q = g.constant(&Tensor::new(vec![1, d], v.to_vec())?);
    let pr = g.constant(&Tensor::new(vec![1, d], p.to_vec())?);
    let s = ntl_forward(&mut g, &vars, q, pr)?;
    Ok(g.scalar(s))
}

/// Softmax-normalised NTL scores against class-mean prototypes.
pub fn ntl_episode_scores(s: &SupportSet, q: &QuerySet, params: &NtlParams) -> Result<ScoreMatrix> {
    let mut g = Graph::new();
    let vars = NtlVars::from_slice(&params.bind_all(&mut g, false));
    let sv = g.constant(&s.as_matrix());
    let qv = g.constant(q.vectors());
    let p = proto::prototypes(&mut g, sv, s.ways(), s.shots())?;
    let raw = ntl_forward(&mut g, &vars, qv, p)?;
    Ok(probabilities(&mut g, raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| i.to_string()).collect()
    }

    fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_rows() {
        let p = RelationBaseParams::new(
            Tensor::zeros(vec![4, 3]),
            Tensor::zeros(vec![3, 3]),
            Tensor::zeros(vec![3]),
        )
        .unwrap();
        let s = SupportSet::new(&[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], names(2)).unwrap();
        let q = QuerySet::new(&[vec![0.5, 0.5], vec![2.0, -1.0]], None).unwrap();
        let out = relation_base_scores(&s, &q, &p).unwrap();
        assert!(out.scores.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_chain_mismatch_is_config_error() {
        let r = RelationBaseParams::new(
            Tensor::zeros(vec![4, 3]),
            Tensor::zeros(vec![2, 3]),
            Tensor::zeros(vec![3]),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn hand_computed_forward_pass() {
        // pair [1, 2 | 0, 1]; M1 row-chain -> [0, 3] -> relu [0, 3]
        // -> ·M2 = [9, 12] -> ·w = 9 − 6 = 3
        let m1 = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, -1.0], [-1.0, 1.0]]).unwrap();
        let m2 = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let w = Tensor::vector(vec![1.0, -0.5]);
        let params = RelationBaseParams::new(m1, m2, w).unwrap();
        let mut g = Graph::new();
        let vars = RelationBaseVars::from_slice(&params.bind_all(&mut g, false));
        let q = g.constant(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let p = g.constant(&Tensor::from_rows(&[[0.0, 1.0], [1.0, 2.0]]).unwrap());
        let s = relation_base_forward(&mut g, &vars, q, p).unwrap();
        assert_eq!(g.value(s)[0], 3.0);
        // second pair [1, 2 | 1, 2]: [2, 3] -> relu -> [11, 16] -> 11 − 8 = 3
        assert_eq!(g.value(s)[1], 3.0);
    }

    #[test]
    fn relation_base_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (d, hb) = (3, 4);
        let inputs = vec![
            rand_tensor(vec![2 * d, hb], &mut rng),
            rand_tensor(vec![hb, hb], &mut rng),
            rand_tensor(vec![hb], &mut rng),
        ];
        let q = rand_tensor(vec![3, d], &mut rng);
        let p = rand_tensor(vec![2, d], &mut rng);
        let report = check_gradients(&inputs, GradCheck::default(), |g, v| {
            let vars = RelationBaseVars::from_slice(v);
            let (qv, pv) = (g.constant(&q), g.constant(&p));
            let s = relation_base_forward(g, &vars, qv, pv)?;
            let pr = g.softmax_rows(s);
            let l = g.ln_clamped(pr, 1e-12);
            let l = g.gather_rows(l, &[0])?;
            Ok(g.sum(l))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn ntl_identity_slice() {
        let m = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = NtlParams::new(m, Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(ntl_scores(&[1.0, 0.0], &[1.0, 0.0], &p).unwrap(), 1.0);
    }

    #[test]
    fn ntl_zero_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p =
            NtlParams::new(rand_tensor(vec![5, 3, 3], &mut rng), Tensor::zeros(vec![5])).unwrap();
        assert_eq!(
            ntl_scores(&[1.0, -2.0, 0.3], &[0.4, 0.4, 9.0], &p).unwrap(),
            0.0
        );
    }

    #[test]
    fn ntl_matches_per_slice_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (h, d) = (3, 4);
        let params = NtlParams::new(
            rand_tensor(vec![h, d, d], &mut rng),
            rand_tensor(vec![h], &mut rng),
        )
        .unwrap();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut want = 0.0;
        for t in 0..h {
            let mut form = 0.0;
            for a in 0..d {
                for b in 0..d {
                    form += v[a] * params.m.get(&[t, a, b]) * p[b];
                }
            }
            want += params.w.data()[t] * form.max(0.0);
        }
        assert!((ntl_scores(&v, &p, &params).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ntl_batched_matches_single_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = NtlParams::new(
            rand_tensor(vec![4, 3, 3], &mut rng),
            rand_tensor(vec![4], &mut rng),
        )
        .unwrap();
        let q = rand_tensor(vec![5, 3], &mut rng);
        let p = rand_tensor(vec![2, 3], &mut rng);
        let mut g = Graph::new();
        let vars = NtlVars::from_slice(&params.bind_all(&mut g, false));
        let (qv, pv) = (g.constant(&q), g.constant(&p));
        let s = ntl_forward(&mut g, &vars, qv, pv).unwrap();
        for i in 0..5 {
            for c in 0..2 {
                let single = ntl_scores(q.row(i), p.row(c), &params).unwrap();
                assert!((g.value(s)[i * 2 + c] - single).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ntl_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inputs = vec![
            rand_tensor(vec![5, 3, 3], &mut rng),
            rand_tensor(vec![5], &mut rng),
        ];
        let q = rand_tensor(vec![4, 3], &mut rng);
        let p = rand_tensor(vec![3, 3], &mut rng);
        let report = check_gradients(&inputs, GradCheck::default(), |g, v| {
            let vars = NtlVars::from_slice(v);
            let (qv, pv) = (g.constant(&q), g.constant(&p));
            let s = ntl_forward(g, &vars, qv, pv)?;
            let s = g.softmax_rows(s);
            let s = g.ln_clamped(s, 1e-12);
            let s = g.gather_rows(s, &[1, 3])?;
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
