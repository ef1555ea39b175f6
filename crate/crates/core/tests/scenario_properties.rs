use hvac_dfl::scenarios::{
    build_hot_year, daily_mean, days_of, kmedoid_cluster, order_cycle, pick_extremes, synthesize_year, WeatherParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn cycle_jump(means: &[f64], order: &[usize]) -> f64 {
    let n = order.len();
    (0..n).map(|i| (means[order[i]] - means[order[(i + 1) % n]]).abs()).sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn random_days(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let base = rng.random_range(-10.0..30.0);
            (0..24).map(|_| base + rng.random_range(-3.0..3.0)).collect()
        })
        .collect()
}

#[test]
fn two_blobs_match_the_exhaustive_pair_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let days: Vec<Vec<f64>> = (0..20)
        .map(|d| vec![if d % 2 == 0 { 0.0 } else { 30.0 } + rng.random_range(-0.5..0.5); 24])
        .collect();
    let c = kmedoid_cluster(&days, 2, &[]).unwrap();
    let mut best = f64::INFINITY;
    for i in 0..20 {
        for j in i + 1..20 {
            let cost: f64 = days.iter().map(|d| dist(d, &days[i]).min(dist(d, &days[j]))).sum();
            best = best.min(cost);
        }
    }
    assert!((c.cost - best).abs() < 1e-9, "{} vs {}", c.cost, best);
    assert_ne!(c.medoids[0] % 2, c.medoids[1] % 2);
}

#[test]
fn planted_extremes_are_recovered() {
    let mut days = days_of(&synthesize_year(3, &WeatherParams::default()));
    days[100] = vec![-40.0; 24];
    days[200] = vec![50.0; 24];
    days[300] = (0..24).map(|h| if h % 2 == 0 { -20.0 } else { 40.0 }).collect();
    assert_eq!(pick_extremes(&days), [100, 200, 300]);
    let c = kmedoid_cluster(&days, 10, &[100, 200, 300]).unwrap();
    assert_eq!(&c.medoids[..3], &[100, 200, 300]);
}

#[test]
fn one_medoid_orders_to_itself() {
    assert_eq!(order_cycle(&[4.2]), vec![0]);
}

#[test]
fn smooth_cycle_is_kept() {
    let means = [0.0, 10.0, 20.0, 30.0, 25.0, 15.0, 5.0];
    assert_eq!(order_cycle(&means), (0..7).collect::<Vec<_>>());
}

#[test]
fn four_means_sweep_up_then_down() {
    let means = [0.0, 10.0, 20.0, 30.0];
    let order = order_cycle(&means);
    let best = permutations(4).iter().map(|p| cycle_jump(&means, p)).fold(f64::INFINITY, f64::min);
    assert!((cycle_jump(&means, &order) - best).abs() < 1e-12);
    assert!(order == [0, 2, 3, 1] || order == [0, 1, 3, 2], "{order:?}");
}

#[test]
fn hot_year_structure() {
    let days = days_of(&synthesize_year(5, &WeatherParams::default()));
    let fixed = pick_extremes(&days);
    let c = kmedoid_cluster(&days, 10, &fixed).unwrap();
    let hot = build_hot_year(&days, &c);
    assert_eq!(hot.len(), 10);
    let mut shifted = 0;
    for (k, s) in hot.iter().enumerate() {
        assert_eq!(c.assignment[s.day], k);
        assert!(daily_mean(&s.ambient) >= daily_mean(&days[c.medoids[k]]) - 1e-12);
        let offset = daily_mean(&s.ambient) - daily_mean(&days[s.day]);
        if (offset - 2.0).abs() < 1e-9 {
            shifted += 1;
        } else {
            assert!(offset.abs() < 1e-12);
        }
    }
    assert_eq!(shifted, 1);
    let hot_mean = hot.iter().map(|s| daily_mean(&s.ambient)).sum::<f64>() / 10.0;
    let train_mean = c.medoids.iter().map(|&m| daily_mean(&days[m])).sum::<f64>() / 10.0;
    assert!(hot_mean > train_mean, "{hot_mean} vs {train_mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn up_down_sweep_is_a_shortest_cycle(means in prop::collection::vec(-20.0f64..40.0, 1..=7)) {
        let order = order_cycle(&means);
        let mut seen = order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..means.len()).collect::<Vec<_>>());
        let best = permutations(means.len()).iter().map(|p| cycle_jump(&means, p)).fold(f64::INFINITY, f64::min);
        prop_assert!((cycle_jump(&means, &order) - best).abs() <= 1e-9);
    }

    #[test]
    fn clustering_invariants(seed in any::<u64>(), n in 8usize..40, k in 1usize..6, nfixed in 0usize..3) {
        let days = random_days(seed, n);
        let fixed: Vec<usize> = (0..nfixed.min(k)).map(|i| (i * 7 + seed as usize % 5) % n).collect();
        let mut uniq = fixed.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assume!(uniq.len() == fixed.len());
        let c = kmedoid_cluster(&days, k, &fixed).unwrap();
        prop_assert_eq!(c.medoids.len(), k);
        prop_assert_eq!(&c.medoids[..fixed.len()], &fixed[..]);
        prop_assert!(c.medoids.iter().all(|&m| m < n));
        for (cl, &m) in c.medoids.iter().enumerate() {
            prop_assert!(dist(&days[m], &days[c.medoids[c.assignment[m]]]) == 0.0, "medoid {} in cluster {}", m, cl);
        }
        let mut cost = 0.0;
        for (d, day) in days.iter().enumerate() {
            let nearest = c.medoids.iter().map(|&m| dist(day, &days[m])).fold(f64::INFINITY, f64::min);
            let own = dist(day, &days[c.medoids[c.assignment[d]]]);
            prop_assert!(own <= nearest + 1e-12);
            cost += own;
        }
        prop_assert!((cost - c.cost).abs() <= 1e-9 * (1.0 + cost));
        prop_assert!(c.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!((c.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(kmedoid_cluster(&days, k, &fixed).unwrap(), c);
    }
}
