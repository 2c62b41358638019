use super::{DualMemory, MemoryError};
use crate::numerics::{squared_distance, Real};

/// Constants of the episodic novelty reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NguConfig {
    pub c: Real,
    pub epsilon: Real,
    pub rho_min: Real,
    pub s_max: Real,
    pub neighbours: usize,
}

impl Default for NguConfig {
    fn default() -> Self {
        Self { c: 1e-3, epsilon: 1e-4, rho_min: 8e-3, s_max: 2.0, neighbours: 10 }
    }
}

/// Lifetime running mean of squared neighbour distances. Survives memory
/// clears.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NguStats {
    pub mean: Real,
    pub count: u64,
}

impl NguStats {
    fn absorb(&mut self, d2: Real) {
        self.count += 1;
        self.mean += (d2 - self.mean) / self.count as Real;
    }
}

/// Novelty of `e` against the rows of one memory column.
///
/// Uses the `neighbours` nearest rows by Euclidean distance, normalised by
/// the mean before this call; the mean is then updated with their squared
/// distances. Returns 0 and leaves `stats` alone while the column holds
/// fewer than `neighbours` rows.
pub fn ngu_reward<'a>(
    rows: impl Iterator<Item = &'a [Real]>,
    e: &[Real],
    stats: &mut NguStats,
    cfg: &NguConfig,
) -> Result<Real, MemoryError> {
    let mut d2 = Vec::new();
    for r in rows {
        if r.len() != e.len() {
            return Err(MemoryError::Dim(format!("embedding of width {} against rows of width {}", e.len(), r.len())));
        }
        d2.push(squared_distance(r, e));
    }
    if d2.len() < cfg.neighbours || cfg.neighbours == 0 {
        return Ok(0.0);
    }
    d2.select_nth_unstable_by(cfg.neighbours - 1, |a, b| a.total_cmp(b));
    d2.truncate(cfg.neighbours);
    d2.sort_by(|a, b| a.total_cmp(b));
    let scale = stats.mean + cfg.c;
    let kernel: Real = d2
        .iter()
        .map(|&d| cfg.epsilon / ((d / scale - cfg.rho_min).max(0.0) + cfg.epsilon))
        .sum();
    let s = kernel.sqrt() + cfg.c;
    for &d in &d2 {
        stats.absorb(d);
    }
    Ok(if s < cfg.s_max { 1.0 / s } else { 0.0 })
}

/// Novelty of `(l, v)` against the language keys and vision values of
/// `mem`, each with its own statistics.
pub fn modality_ngu(
    mem: &DualMemory,
    l: &[Real],
    v: &[Real],
    stats_lang: &mut NguStats,
    stats_im: &mut NguStats,
    cfg: &NguConfig,
) -> Result<(Real, Real), MemoryError> {
    let lang = ngu_reward(mem.keys(), l, stats_lang, cfg)?;
    let im = ngu_reward(mem.values(), v, stats_im, cfg)?;
    Ok((lang, im))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::Slot;
    use super::*;

    /// Straight transcription of the novelty formulas, full sort, no reuse of
    /// the implementation's helpers.
    fn brute(rows: &[Vec<Real>], e: &[Real], mean: Real) -> Real {
        let (c, eps, rho_min, s_max) = (1e-3, 1e-4, 8e-3, 2.0);
        let mut d: Vec<Real> = rows.iter().map(|r| r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut sum = 0.0;
        for di in &d[..10] {
            let rho = di / (mean + c);
            sum += eps / (Real::max(rho - rho_min, 0.0) + eps);
        }
        let s = sum.sqrt() + c;
        if s < s_max { 1.0 / s } else { 0.0 }
    }

    #[test]
    fn identical_neighbours_give_zero() {
        let rows = vec![vec![0.5, 0.5]; 10];
        let mut st = NguStats::default();
        let r = ngu_reward(rows.iter().map(Vec::as_slice), &[0.5, 0.5], &mut st, &NguConfig::default()).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(st.count, 10);
        // s = sqrt(10) + c > s_max
        assert!((10f64).sqrt() + 1e-3 > 2.0);
    }

    #[test]
    fn far_neighbours_give_inverse_c() {
        let rows: Vec<Vec<Real>> = (0..10).map(|i| vec![100.0 + i as Real, 0.0]).collect();
        let mut st = NguStats::default();
        let r = ngu_reward(rows.iter().map(Vec::as_slice), &[0.0, 0.0], &mut st, &NguConfig::default()).unwrap();
        assert!((r - 1000.0).abs() < 20.0, "{r}");
    }

    #[test]
    fn sparse_column_is_silent_and_keeps_stats() {
        let rows = vec![vec![1.0]; 9];
        let mut st = NguStats { mean: 0.25, count: 4 };
        let r = ngu_reward(rows.iter().map(Vec::as_slice), &[0.0], &mut st, &NguConfig::default()).unwrap();
        assert_eq!((r, st), (0.0, NguStats { mean: 0.25, count: 4 }));
        assert!(ngu_reward(rows.iter().map(Vec::as_slice), &[0.0, 1.0], &mut st, &NguConfig::default()).is_err());
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = NguConfig::default();
        for trial in 0..1000 {
            let n = rng.random_range(10..40);
            let dim = rng.random_range(1..6);
            let spread: Real = [1e-3, 0.05, 1.0][trial % 3];
            let rows: Vec<Vec<Real>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<Real>() * spread).collect()).collect();
            let e: Vec<Real> = (0..dim).map(|_| rng.random::<Real>() * spread).collect();
            let mean = rng.random::<Real>() * spread;
            let mut st = NguStats { mean, count: 5 };
            let got = ngu_reward(rows.iter().map(Vec::as_slice), &e, &mut st, &cfg).unwrap();
            let want = brute(&rows, &e, mean);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn running_mean_is_lifetime_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut st = NguStats::default();
        let mut seen = Vec::new();
        let cfg = NguConfig::default();
        for _ in 0..20 {
            let rows: Vec<Vec<Real>> = (0..10).map(|_| vec![rng.random::<Real>()]).collect();
            let e = [rng.random::<Real>()];
            seen.extend(rows.iter().map(|r| (r[0] - e[0]).powi(2)));
            ngu_reward(rows.iter().map(Vec::as_slice), &e, &mut st, &cfg).unwrap();
        }
        let want = seen.iter().sum::<Real>() / seen.len() as Real;
        assert!((st.mean - want).abs() < 1e-12);
        assert_eq!(st.count, 200);
    }

    #[test]
    fn repeated_silence_stops_paying() {
        let mut mem = DualMemory::new(64, 2, 1).unwrap();
        let (mut sl, mut si) = (NguStats::default(), NguStats::default());
        let cfg = NguConfig::default();
        let null = vec![0.1, 0.2];
        let mut rewards = Vec::new();
        for t in 0..20 {
            let (rl, _) = modality_ngu(&mem, &null, &[t as Real], &mut sl, &mut si, &cfg).unwrap();
            rewards.push(rl);
            mem.write(Slot::detached(null.clone()), Slot::detached(vec![t as Real]), t).unwrap();
        }
        assert!(rewards[10..].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn novel_word_pays_then_decays() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = NguConfig::default();
        let mut mem = DualMemory::new(64, 4, 1).unwrap();
        let (mut sl, mut si) = (NguStats::default(), NguStats::default());
        let silence = vec![0.0, 0.0, 0.0, 0.0];
        let varied = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.random::<Real>()).collect::<Vec<_>>();
        for t in 0..30 {
            let l = if t % 2 == 0 { silence.clone() } else { varied(&mut rng) };
            modality_ngu(&mem, &l, &[0.0], &mut sl, &mut si, &cfg).unwrap();
            mem.write(Slot::detached(l), Slot::detached(vec![0.0]), t).unwrap();
        }
        let dax = vec![3.0, -3.0, 3.0, -3.0];
        let mut first = 0.0;
        let mut last = 0.0;
        for t in 0..12 {
            let (rl, _) = modality_ngu(&mem, &dax, &[0.0], &mut sl, &mut si, &cfg).unwrap();
            if t == 0 {
                first = rl;
            }
            last = rl;
            mem.write(Slot::detached(dax.clone()), Slot::detached(vec![0.0]), 30 + t).unwrap();
        }
        assert!(first > 0.0);
        assert!(last < first * 1e-2, "{first} {last}");
    }

    #[test]
    fn columns_are_independent() {
        let cfg = NguConfig::default();
        let build = |keys: Real| {
            let mut m = DualMemory::new(20, 1, 1).unwrap();
            for t in 0..12 {
                m.write(Slot::detached(vec![keys * t as Real]), Slot::detached(vec![t as Real * 0.01]), t).unwrap();
            }
            m
        };
        let mut r = Vec::new();
        for keys in [0.0, 5.0] {
            let (mut sl, mut si) = (NguStats::default(), NguStats::default());
            r.push(modality_ngu(&build(keys), &[1.0], &[0.5], &mut sl, &mut si, &cfg).unwrap().1);
        }
        assert_eq!(r[0], r[1]);
    }

    proptest! {
        #[test]
        fn order_invariant(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 10..30), seed in any::<u64>()) {
            let e = [0.1, -0.2, 0.3];
            let mut shuffled = rows.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let cfg = NguConfig::default();
            let (mut a, mut b) = (NguStats { mean: 0.3, count: 3 }, NguStats { mean: 0.3, count: 3 });
            let ra = ngu_reward(rows.iter().map(Vec::as_slice), &e, &mut a, &cfg).unwrap();
            let rb = ngu_reward(shuffled.iter().map(Vec::as_slice), &e, &mut b, &cfg).unwrap();
            prop_assert_eq!(ra, rb);
            prop_assert_eq!(a, b);
        }
    }
}
