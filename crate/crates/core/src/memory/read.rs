use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;

use super::{DualMemory, FusedMemory, Slot};
use crate::numerics::{cosine_similarity, Blocks, Linear, NumericsError, ParamSet, Real, SelfAttention, Tape, Tensor, Var};

/// Indices and cosine similarities of the `k` rows most similar to `query`,
/// best first. Ties go to the lower (older) row index. Fewer rows than `k`
/// returns them all.
pub fn top_k<'a>(query: &[Real], rows: impl Iterator<Item = &'a [Real]>, k: usize) -> Vec<(usize, Real)> {
    let mut scored: Vec<(usize, Real)> = rows
        .enumerate()
        .map(|(i, r)| (i, cosine_similarity(query, r).unwrap_or(0.0)))
        .collect();
    let order = |a: &(usize, Real), b: &(usize, Real)| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0));
    if scored.len() > k && k > 0 {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.truncate(k);
    scored.sort_by(order);
    scored
}

/// Stacks slots as rows of one tape node. Slots written on this tape stay
/// linked to their source rows; older slots become constants.
fn gather_slots(tape: &mut Tape, slots: &[&Slot], width: usize) -> Result<Var, NumericsError> {
    let mut consts: Vec<Real> = Vec::new();
    let mut refs: Vec<Option<(Var, usize)>> = Vec::with_capacity(slots.len());
    let mut const_rows = 0;
    for s in slots {
        match s.source.filter(|r| tape.owns(r)) {
            Some(r) => refs.push(Some((r.var, r.row))),
            None => {
                consts.extend_from_slice(&s.data);
                refs.push(None);
                const_rows += 1;
            }
        }
    }
    let table = tape.constant(Tensor::new(const_rows, width, consts)?);
    let mut next = 0;
    let refs: Vec<(Var, usize)> = refs
        .into_iter()
        .map(|r| {
            r.unwrap_or_else(|| {
                next += 1;
                (table, next - 1)
            })
        })
        .collect();
    tape.gather_rows(&refs, width)
}

/// Splits a head-major `[(n*B) x w]` node into `n` column groups of a
/// `[B x n*w]` node.
fn concat_heads(tape: &mut Tape, stacked: Var, heads: usize, batch: usize) -> Result<Var, NumericsError> {
    let width = tape.value(stacked).cols();
    let parts = (0..heads)
        .map(|h| tape.gather_rows(&(0..batch).map(|b| (stacked, h * batch + b)).collect::<Vec<_>>(), width))
        .collect::<Result<Vec<_>, _>>()?;
    tape.concat_cols(&parts)
}

/// Read heads of the dual-coding memory. Each head has a linear query
/// network over `[v_t, l_t, h_{t-1}]`; the weighted top-k values of every
/// head pass through one shared self-attention layer and are summed.
#[derive(Clone, Debug, PartialEq)]
pub struct DcemReader {
    pub queries: Vec<Linear>,
    pub aggregation: SelfAttention,
    pub k: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl DcemReader {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        query_in: usize,
        key_dim: usize,
        value_dim: usize,
        heads: usize,
        k: usize,
        attention_key: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let queries = (0..heads).map(|h| Linear::new(params, &format!("dcem.query{h}"), query_in, key_dim, rng)).collect();
        let aggregation = SelfAttention::new(params, "dcem.aggregate", value_dim, attention_key, value_dim, rng);
        Self { queries, aggregation, k: k.max(1), key_dim, value_dim }
    }

    pub fn heads(&self) -> usize {
        self.queries.len()
    }

    pub fn width(&self) -> usize {
        self.heads() * self.value_dim
    }

    /// Read-out `[B x heads*value_dim]` for one memory per batch row.
    /// `query_in` is `[B x query_in]`, normally `[v_t, l_t, h_{t-1}]`.
    pub fn read(&self, tape: &mut Tape, memories: &[&DualMemory], query_in: Var) -> Result<Var, NumericsError> {
        let b = memories.len();
        if tape.value(query_in).rows() != b {
            return Err(NumericsError::shape("read_dcem", format!("{} query rows for {b} memories", tape.value(query_in).rows())));
        }
        if let Some(m) = memories.iter().find(|m| m.key_dim() != self.key_dim || m.value_dim() != self.value_dim) {
            return Err(NumericsError::shape(
                "read_dcem",
                format!("memory ({}, {}) vs reader ({}, {})", m.key_dim(), m.value_dim(), self.key_dim, self.value_dim),
            ));
        }
        let qs = self.queries.iter().map(|q| q.forward(tape, query_in)).collect::<Result<Vec<_>, _>>()?;
        if memories.iter().all(|m| m.occupancy() == 0) {
            return Ok(tape.constant(Tensor::zeros(b, self.width())));
        }
        let mut sizes = Vec::with_capacity(self.heads() * b);
        let mut keys: Vec<&Slot> = Vec::new();
        let mut values: Vec<&Slot> = Vec::new();
        for &q in &qs {
            for (row, m) in memories.iter().enumerate() {
                let picked = top_k(tape.value(q).row(row), m.keys(), self.k);
                sizes.push(picked.len());
                for (i, _) in picked {
                    keys.push(m.key(i));
                    values.push(m.value(i));
                }
            }
        }
        let blocks = Arc::new(Blocks::new(sizes));
        let query_rows: Vec<(Var, usize)> = qs.iter().flat_map(|&q| (0..b).map(move |r| (q, r))).collect();
        let stacked_q = tape.gather_rows(&query_rows, self.key_dim)?;
        let k = gather_slots(tape, &keys, self.key_dim)?;
        let v = gather_slots(tape, &values, self.value_dim)?;
        let sims = tape.cosine_blocks(stacked_q, k, &blocks)?;
        let weights = tape.block_softmax(sims, &blocks)?;
        let weighted = tape.mul_col(v, weights)?;
        let attended = self.aggregation.forward(tape, weighted, &blocks)?;
        let per_head = tape.block_sum(attended, &blocks)?;
        concat_heads(tape, per_head, self.heads(), b)
    }
}

/// Read heads of the fused memory: query `q(h_t)` and read strength
/// `beta(h_t) = softplus(.)` per head; weights are a softmax over the
/// strength-scaled cosine similarities of the top-k rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DncReader {
    pub queries: Vec<Linear>,
    pub strengths: Vec<Linear>,
    pub k: usize,
    pub dim: usize,
}

impl DncReader {
    pub fn new(params: &mut ParamSet, query_in: usize, dim: usize, heads: usize, k: usize, rng: &mut impl Rng) -> Self {
        let queries = (0..heads).map(|h| Linear::new(params, &format!("dnc.query{h}"), query_in, dim, rng)).collect();
        let strengths = (0..heads).map(|h| Linear::new(params, &format!("dnc.beta{h}"), query_in, 1, rng)).collect();
        Self { queries, strengths, k: k.max(1), dim }
    }

    pub fn heads(&self) -> usize {
        self.queries.len()
    }

    pub fn width(&self) -> usize {
        self.heads() * self.dim
    }

    pub fn read(&self, tape: &mut Tape, memories: &[&FusedMemory], h: Var) -> Result<Var, NumericsError> {
        let b = memories.len();
        if tape.value(h).rows() != b {
            return Err(NumericsError::shape("read_dnc", format!("{} rows for {b} memories", tape.value(h).rows())));
        }
        if let Some(m) = memories.iter().find(|m| m.dim() != self.dim) {
            return Err(NumericsError::shape("read_dnc", format!("memory width {} vs reader {}", m.dim(), self.dim)));
        }
        let qs = self.queries.iter().map(|q| q.forward(tape, h)).collect::<Result<Vec<_>, _>>()?;
        let betas = self
            .strengths
            .iter()
            .map(|s| {
                let z = s.forward(tape, h)?;
                Ok(tape.softplus(z))
            })
            .collect::<Result<Vec<_>, NumericsError>>()?;
        if memories.iter().all(|m| m.occupancy() == 0) {
            return Ok(tape.constant(Tensor::zeros(b, self.width())));
        }
        let mut sizes = Vec::with_capacity(self.heads() * b);
        let mut rows: Vec<&Slot> = Vec::new();
        for &q in &qs {
            for (r, m) in memories.iter().enumerate() {
                let picked = top_k(tape.value(q).row(r), m.rows(), self.k);
                sizes.push(picked.len());
                rows.extend(picked.into_iter().map(|(i, _)| m.slot(i)));
            }
        }
        let blocks = Arc::new(Blocks::new(sizes));
        let stacked_q = tape.gather_rows(&qs.iter().flat_map(|&q| (0..b).map(move |r| (q, r))).collect::<Vec<_>>(), self.dim)?;
        let stacked_beta = tape.gather_rows(&betas.iter().flat_map(|&s| (0..b).map(move |r| (s, r))).collect::<Vec<_>>(), 1)?;
        let m = gather_slots(tape, &rows, self.dim)?;
        let sims = tape.cosine_blocks(stacked_q, m, &blocks)?;
        let beta = tape.repeat_blocks(stacked_beta, &blocks)?;
        let scaled = tape.mul(sims, beta)?;
        let weights = tape.block_softmax(scaled, &blocks)?;
        let weighted = tape.mul_col(m, weights)?;
        let per_head = tape.block_sum(weighted, &blocks)?;
        concat_heads(tape, per_head, self.heads(), b)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::{matmul, softmax, softplus};

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<Real>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Full sort by (similarity desc, index asc).
    fn brute_top_k(q: &[Real], rows: &[Vec<Real>], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        let sim = |i: usize| {
            let d: Real = q.iter().zip(&rows[i]).map(|(a, b)| a * b).sum();
            let n = q.iter().map(|x| x * x).sum::<Real>().sqrt() * rows[i].iter().map(|x| x * x).sum::<Real>().sqrt();
            if n < 1e-16 { 0.0 } else { d / n }
        };
        idx.sort_by(|&a, &b| sim(b).partial_cmp(&sim(a)).unwrap().then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }

    #[test]
    fn top_k_matches_full_sort_on_1024_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = random_rows(&mut rng, 1024, 8);
        let q: Vec<Real> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        for k in [1, 2, 8, 100, 1024, 2000] {
            let got: Vec<usize> = top_k(&q, rows.iter().map(Vec::as_slice), k).into_iter().map(|p| p.0).collect();
            assert_eq!(got, brute_top_k(&q, &rows, k));
        }
    }

    #[test]
    fn top_k_breaks_ties_by_age() {
        let rows = [vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 0.0], vec![1.0, 0.0]];
        let got: Vec<usize> = top_k(&[1.0, 0.0], rows.iter().map(Vec::as_slice), 2).into_iter().map(|p| p.0).collect();
        assert_eq!(got, [0, 2]);
    }

    fn dual(rows: &[(Vec<Real>, Vec<Real>)], cap: usize) -> DualMemory {
        let mut m = DualMemory::new(cap, rows[0].0.len(), rows[0].1.len()).unwrap();
        for (t, (k, v)) in rows.iter().enumerate() {
            m.write(Slot::detached(k.clone()), Slot::detached(v.clone()), t).unwrap();
        }
        m
    }

    #[test]
    fn dcem_single_row_returns_its_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let reader = DcemReader::new(&mut params, 3, 3, 2, 1, 8, 2, &mut rng);
        let value = vec![0.7, -0.4];
        let mem = dual(&[(vec![1.0, 2.0, 3.0], value.clone())], 4);
        let expected = matmul(&Tensor::row_vector(value), params.get(reader.aggregation.value)).unwrap();
        let mut tape = Tape::with_params(Arc::new(params));
        let q = tape.constant(Tensor::row_vector(vec![0.3, 0.1, 0.9]));
        let r = reader.read(&mut tape, &[&mem], q).unwrap();
        for (a, b) in tape.value(r).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_memory_reads_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::new();
        let dcem = DcemReader::new(&mut params, 3, 2, 2, 3, 8, 2, &mut rng);
        let dnc = DncReader::new(&mut params, 3, 2, 3, 8, &mut rng);
        let mut tape = Tape::with_params(Arc::new(params));
        let q = tape.constant(Tensor::filled(2, 3, 0.5));
        let a = DualMemory::new(10, 2, 2).unwrap();
        let r = dcem.read(&mut tape, &[&a, &a], q).unwrap();
        assert_eq!(tape.value(r).shape(), [2, 6]);
        assert!(tape.value(r).data().iter().all(|&x| x == 0.0));
        let f = FusedMemory::new(10, 2).unwrap();
        let r = dnc.read(&mut tape, &[&f, &f], q).unwrap();
        assert!(tape.value(r).data().iter().all(|&x| x == 0.0));
    }

    /// Independent evaluation of one DCEM head for one memory.
    fn dcem_oracle(params: &ParamSet, reader: &DcemReader, head: usize, qin: &[Real], mem: &[(Vec<Real>, Vec<Real>)]) -> Vec<Real> {
        let lin = reader.queries[head];
        let q = matmul(&Tensor::row_vector(qin.to_vec()), params.get(lin.weight)).unwrap();
        let q: Vec<Real> = q.data().iter().zip(params.get(lin.bias).data()).map(|(a, b)| a + b).collect();
        let keys: Vec<Vec<Real>> = mem.iter().map(|(k, _)| k.clone()).collect();
        let idx = brute_top_k(&q, &keys, reader.k);
        let sims: Vec<Real> = idx.iter().map(|&i| cosine_similarity(&q, &keys[i]).unwrap()).collect();
        let w = softmax(&sims).unwrap();
        let m = Tensor::from_rows(&idx.iter().zip(&w).map(|(&i, wi)| mem[i].1.iter().map(|x| x * wi).collect()).collect::<Vec<_>>()).unwrap();
        let agg = &reader.aggregation;
        let qq = matmul(&m, params.get(agg.query)).unwrap();
        let kk = matmul(&m, params.get(agg.key)).unwrap();
        let vv = matmul(&m, params.get(agg.value)).unwrap();
        let n = idx.len();
        let mut out = vec![0.0; vv.cols()];
        for i in 0..n {
            let s: Vec<Real> = (0..n)
                .map(|j| qq.row(i).iter().zip(kk.row(j)).map(|(a, b)| a * b).sum::<Real>() / (agg.key_dim as Real).sqrt())
                .collect();
            let p = softmax(&s).unwrap();
            for j in 0..n {
                for c in 0..vv.cols() {
                    out[c] += p[j] * vv.get(j, c);
                }
            }
        }
        out
    }

    #[test]
    fn dcem_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let reader = DcemReader::new(&mut params, 4, 3, 2, 2, 3, 2, &mut rng);
        let mems: Vec<Vec<(Vec<Real>, Vec<Real>)>> = (0..2)
            .map(|i| random_rows(&mut rng, 5 + i, 3).into_iter().zip(random_rows(&mut rng, 5 + i, 2)).collect())
            .collect();
        let stores: Vec<DualMemory> = mems.iter().map(|m| dual(m, 16)).collect();
        let qin = random_rows(&mut rng, 2, 4);
        let mut tape = Tape::with_params(Arc::new(params.clone()));
        let q = tape.constant(Tensor::from_rows(&qin).unwrap());
        let r = reader.read(&mut tape, &[&stores[0], &stores[1]], q).unwrap();
        for b in 0..2 {
            for h in 0..2 {
                let want = dcem_oracle(&params, &reader, h, &qin[b], &mems[b]);
                for (c, w) in want.iter().enumerate() {
                    assert!((tape.value(r).get(b, h * 2 + c) - w).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dcem_ignores_unselected_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParamSet::new();
        let reader = DcemReader::new(&mut params, 3, 3, 2, 1, 2, 2, &mut rng);
        let params = Arc::new(params);
        let mut rows: Vec<(Vec<Real>, Vec<Real>)> = random_rows(&mut rng, 6, 3).into_iter().zip(random_rows(&mut rng, 6, 2)).collect();
        let qin = vec![0.2, -0.5, 0.9];
        let read = |rows: &[(Vec<Real>, Vec<Real>)]| {
            let mut tape = Tape::with_params(params.clone());
            let q = tape.constant(Tensor::row_vector(qin.clone()));
            let r = reader.read(&mut tape, &[&dual(rows, 8)], q).unwrap();
            tape.value(r).clone()
        };
        let before = read(&rows);
        let mut tape = Tape::with_params(params.clone());
        let q = tape.constant(Tensor::row_vector(qin.clone()));
        let qv = reader.queries[0].forward(&mut tape, q).unwrap();
        let chosen: Vec<usize> = top_k(tape.value(qv).row(0), rows.iter().map(|r| r.0.as_slice()), 2).into_iter().map(|p| p.0).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            if !chosen.contains(&i) {
                row.1 = vec![100.0, -100.0];
            }
        }
        assert_eq!(read(&rows), before);
    }

    #[test]
    fn dnc_limits_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamSet::new();
        let reader = DncReader::new(&mut params, 3, 2, 1, 3, &mut rng);
        let rows = random_rows(&mut rng, 6, 2);
        let mut mem = FusedMemory::new(10, 2).unwrap();
        for (t, r) in rows.iter().enumerate() {
            mem.write(Slot::detached(r.clone()), t).unwrap();
        }
        let h = vec![0.4, -0.3, 0.8];
        let run = |params: &ParamSet, mem: &FusedMemory| {
            let mut tape = Tape::with_params(Arc::new(params.clone()));
            let hv = tape.constant(Tensor::row_vector(h.clone()));
            let r = reader.read(&mut tape, &[mem], hv).unwrap();
            tape.value(r).row(0).to_vec()
        };
        // Direct formula.
        let lin = |l: &Linear| -> Vec<Real> {
            let w = params.get(l.weight);
            (0..w.cols()).map(|c| (0..3).map(|r| h[r] * w.get(r, c)).sum::<Real>() + params.get(l.bias).data()[c]).collect()
        };
        let q = lin(&reader.queries[0]);
        let beta = softplus(lin(&reader.strengths[0])[0]);
        let idx = brute_top_k(&q, &rows, 3);
        let w = softmax(&idx.iter().map(|&i| beta * cosine_similarity(&q, &rows[i]).unwrap()).collect::<Vec<_>>()).unwrap();
        let want: Vec<Real> = (0..2).map(|c| idx.iter().zip(&w).map(|(&i, wi)| wi * rows[i][c]).sum()).collect();
        for (a, b) in run(&params, &mem).iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
        // beta -> 0+: plain average of the top-k rows.
        let mut p0 = params.clone();
        p0.get_mut(reader.strengths[0].weight).data_mut().fill(0.0);
        p0.get_mut(reader.strengths[0].bias).data_mut().fill(-60.0);
        let avg: Vec<Real> = (0..2).map(|c| idx.iter().map(|&i| rows[i][c]).sum::<Real>() / 3.0).collect();
        for (a, b) in run(&p0, &mem).iter().zip(&avg) {
            assert!((a - b).abs() < 1e-9);
        }
        // Identical rows read back exactly.
        let mut same = FusedMemory::new(10, 2).unwrap();
        for t in 0..5 {
            same.write(Slot::detached(vec![0.25, -0.75]), t).unwrap();
        }
        for (a, b) in run(&params, &same).iter().zip([0.25, -0.75]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_flow_into_written_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ParamSet::new();
        let reader = DcemReader::new(&mut params, 3, 3, 2, 1, 2, 2, &mut rng);
        let mut tape = Tape::with_params(Arc::new(params));
        let written = tape.input(Tensor::from_rows(&random_rows(&mut rng, 2, 2)).unwrap());
        let mut mem = DualMemory::new(4, 3, 2).unwrap();
        for (t, k) in random_rows(&mut rng, 2, 3).into_iter().enumerate() {
            let v = Slot { data: tape.value(written).row(t).to_vec(), source: Some(tape.row_ref(written, t)) };
            mem.write(Slot::detached(k), v, t).unwrap();
        }
        let q = tape.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3]));
        let r = reader.read(&mut tape, &[&mem], q).unwrap();
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(written).unwrap().data().iter().any(|&x| x != 0.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(1000))]
        #[test]
        fn top_k_equals_full_sort(seed in 0u64..u64::MAX, m in 1usize..40, k in 1usize..40, dup in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = random_rows(&mut rng, m, 3);
            if dup && m > 2 {
                rows[m - 1] = rows[0].clone();
            }
            let q: Vec<Real> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = k.min(m);
            let got: Vec<usize> = top_k(&q, rows.iter().map(Vec::as_slice), k).into_iter().map(|p| p.0).collect();
            proptest::prop_assert_eq!(got, brute_top_k(&q, &rows, k));
        }
    }
}
