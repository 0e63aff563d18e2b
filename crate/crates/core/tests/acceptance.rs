//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use lcm_ident::estimation::{conditional_loglik, fit_em, probe_nonidentifiability, FitConfig, FitRun};
use lcm_ident::identifiability::{
    alternating_binomial_sum, build_lambda_matrix, counterexample, is_identifiable, parameter_bound_satisfied,
    verify_counterexample, DEFAULT_RANK_TOL,
};
use lcm_ident::model::{cell_probabilities, conditional_probabilities};
use lcm_ident::moments::{check_moment_proportionality, moments_from_pi, moments_of_model, pi_from_moments};
use lcm_ident::rng::DEFAULT_SEED;
use lcm_ident::simulation::{simulate_replicates, simulate_table, SamplingMode, SimulatedTable, SimulationSpec};
use lcm_ident::LatentClassModel;
use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{five_source_model, max_abs_diff, random_model, reference_q, reference_r};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reference_reproduction() -> Outcome {
    let (q, r) = (reference_q(), reference_r());
    let pq = cell_probabilities(&q);
    let pr = cell_probabilities(&r);
    let dev = max_abs_diff(&conditional_probabilities(&pq).unwrap(), &conditional_probabilities(&pr).unwrap());
    ensure(dev <= 1e-9, || format!("conditional deviation {dev:e} > 1e-9"))?;
    ensure((pq.pi0() - 0.316).abs() <= 5e-4, || format!("pi0_Q = {}", pq.pi0()))?;
    ensure((pr.pi0() - 0.219).abs() <= 5e-4, || format!("pi0_R = {}", pr.pi0()))?;
    let p = check_moment_proportionality(&moments_of_model(&q), &moments_of_model(&r), 1e-9).unwrap();
    let a = p.constant.ok_or("moments not proportional at 1e-9")?;
    ensure((a - 0.875).abs() <= 1e-9, || format!("A = {a}"))?;
    Ok(format!(
        "cond dev {dev:.1e}, pi0_Q {:.5}, pi0_R {:.5}, A {a:.12}",
        pq.pi0(),
        pr.pi0()
    ))
}

fn counterexample_sweep() -> Outcome {
    let mut cases = 0;
    let mut worst_moment: f64 = 0.0;
    let mut smallest_gap = f64::INFINITY;
    for j in 2..=4usize {
        // A from exact integers, independently of the generator
        let half = 1u64 << (2 * j - 1);
        let expected_a = half as f64 / (half - 1) as f64;
        for k in 2..(2 * j).min(9) {
            for alpha in [0.5 / (2 * j) as f64, 0.9 / (2 * j) as f64] {
                let pair = counterexample(j, k, alpha).map_err(|e| e.to_string())?;
                ensure(pair.a == expected_a, || format!("J={j}: A={} != {expected_a}", pair.a))?;
                let report = verify_counterexample(&pair, 1e-9).map_err(|e| e.to_string())?;
                ensure(report.passed, || format!("J={j} K={k} alpha={alpha}: {report:?}"))?;
                ensure(report.pi0_difference.abs() >= 1e-4, || {
                    format!("J={j} K={k} alpha={alpha}: pi0 gap {}", report.pi0_difference)
                })?;
                worst_moment = worst_moment.max(report.max_relative_moment_deviation);
                smallest_gap = smallest_gap.min(report.pi0_difference.abs());
                cases += 1;
            }
        }
    }
    Ok(format!(
        "{cases} pairs, max rel moment dev {worst_moment:.1e}, min pi0 gap {smallest_gap:.2e}"
    ))
}

fn decision_grid() -> Outcome {
    for k in 2..=10u64 {
        for j in 1..=6u64 {
            let d = is_identifiable(j, k).map_err(|e| e.to_string())?;
            ensure(d.identifiable == (2 * j <= k), || format!("J={j} K={k}"))?;
            let bound = parameter_bound_satisfied(j, k).map_err(|e| e.to_string())?;
            ensure(!d.identifiable || bound, || format!("J={j} K={k}: identifiable without parameter bound"))?;
        }
    }
    let strict = parameter_bound_satisfied(3, 5).unwrap() && !is_identifiable(3, 5).unwrap().identifiable;
    ensure(strict, || "(J=3, K=5) should satisfy the bound but not identifiability".into())?;
    Ok("54 grid points; (3,5) separates the bound from identifiability".into())
}

fn moment_transform_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut forward: f64 = 0.0;
    let mut round_trip: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let j = rng.random_range(1..=4);
        let model = random_model(&mut rng, k, j);
        let m = moments_of_model(&model);
        let pi = pi_from_moments(&m);
        forward = forward.max(max_abs_diff(&pi, cell_probabilities(&model).observed()));
        let back = moments_from_pi(&pi).map_err(|e| e.to_string())?;
        round_trip = round_trip.max(max_abs_diff(back.entries(), m.entries()));
    }
    ensure(forward <= 1e-12, || format!("C m vs direct: {forward:e}"))?;
    ensure(round_trip <= 1e-12, || format!("m -> pi -> m: {round_trip:e}"))?;
    Ok(format!("100 models, C m vs direct {forward:.1e}, round trip {round_trip:.1e}"))
}

fn proportionality_case(q: &LatentClassModel, r: &LatentClassModel) -> Result<bool, String> {
    let pq = cell_probabilities(q);
    let pr = cell_probabilities(r);
    let cond_equal =
        max_abs_diff(&conditional_probabilities(&pq).unwrap(), &conditional_probabilities(&pr).unwrap()) <= 1e-10;
    let p = check_moment_proportionality(&moments_of_model(q), &moments_of_model(r), 1e-9).unwrap();
    ensure(cond_equal == p.proportional, || {
        format!("conditional equality {cond_equal} but proportional {}", p.proportional)
    })?;
    if let Some(a) = p.constant {
        let expected = (1.0 - pq.pi0()) / (1.0 - pr.pi0());
        ensure((a - expected).abs() <= 1e-10, || format!("A = {a}, (1-pi0_Q)/(1-pi0_R) = {expected}"))?;
    }
    Ok(p.proportional)
}

fn proportionality_equivalence() -> Outcome {
    ensure(proportionality_case(&reference_q(), &reference_r())?, || "reference pair not proportional".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut proportional = 0;
    for i in 0..50 {
        let (q, r) = if i % 2 == 0 {
            let k = rng.random_range(2..=5);
            let (jq, jr) = (rng.random_range(1..=3), rng.random_range(1..=3));
            (random_model(&mut rng, k, jq), random_model(&mut rng, k, jr))
        } else {
            let j = rng.random_range(2..=4);
            let k = rng.random_range(2..2 * j);
            let alpha = rng.random_range(0.1..0.95) / (2 * j) as f64;
            let pair = counterexample(j, k, alpha).map_err(|e| e.to_string())?;
            (pair.q, pair.r)
        };
        if proportionality_case(&q, &r)? {
            proportional += 1;
        }
    }
    Ok(format!("reference pair + 50 pairs ({proportional} proportional), both directions agree"))
}

fn distinct_values(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(count);
    while out.len() < count {
        let x = rng.random_range(0.01..0.99);
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn lambda_rank_random() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut full_rank = 0;
    for _ in 0..200 {
        let k = rng.random_range(2..=8usize);
        let j = rng.random_range(1..=k);
        let m = rng.random_range(0..=j.min(k - j));
        // columns' entries are pairwise distinct within every source
        let per_source: Vec<Vec<f64>> = (0..k).map(|_| distinct_values(&mut rng, j + m)).collect();
        let column = |c: usize| -> Vec<f64> { per_source.iter().map(|v| v[c]).collect() };
        let weights = |n: usize| vec![1.0 / n as f64; n];
        let q = LatentClassModel::new(weights(j), (0..j).map(column).collect()).map_err(|e| e.to_string())?;
        let mut r_cols: Vec<usize> = (m..j).chain(j..j + m).collect();
        r_cols.shuffle(&mut rng);
        let r = LatentClassModel::new(weights(j), r_cols.into_iter().map(column).collect()).map_err(|e| e.to_string())?;
        let lm = build_lambda_matrix(&q, &r).map_err(|e| e.to_string())?;
        ensure(lm.unmatched() == m, || format!("expected m={m}, found {}", lm.unmatched()))?;
        let rank = lm.rank(DEFAULT_RANK_TOL).map_err(|e| e.to_string())?;
        ensure(rank == j + m, || format!("K={k} J={j} m={m}: rank {rank} < {}", j + m))?;
        full_rank += 1;
    }
    Ok(format!("{full_rank}/200 draws have full column rank J+m"))
}

fn lambda_rank_reference() -> Outcome {
    let lm = build_lambda_matrix(&reference_q(), &reference_r()).map_err(|e| e.to_string())?;
    let shape = (lm.matrix.nrows(), lm.matrix.ncols());
    ensure(shape == (3, 4), || format!("shape {shape:?}"))?;
    let rank = lm.rank(DEFAULT_RANK_TOL).map_err(|e| e.to_string())?;
    ensure(rank == 3, || {
        format!(
            "reference Λ has rank {rank}, expected 3; every class uses one probability for both sources, \
             so rows 01 and 10 coincide and rank <= 2"
        )
    })?;
    Ok("3x4, rank 3".into())
}

fn alternating_sum_identity() -> Outcome {
    let mut checked = 0;
    for n in 2..=32u32 {
        for t in 1..n {
            let s = alternating_binomial_sum(t, n).map_err(|e| e.to_string())?;
            ensure(s.is_zero(), || format!("t={t} n={n}: {s}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (t, n) pairs vanish exactly"))
}

fn full_counts(t: &SimulatedTable) -> Vec<u64> {
    std::iter::once(t.true_missing).chain(t.table.counts().iter().copied()).collect()
}

fn chi_square_critical(df: usize, level: f64) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - level)
}

fn simulation_fidelity() -> Outcome {
    let q = reference_q();
    let pi = cell_probabilities(&q);
    let n = 1_000_000u64;
    let sim = simulate_table(&SimulationSpec::new(q.clone(), n, DEFAULT_SEED).unwrap());
    let counts = full_counts(&sim);
    let mut worst_z: f64 = 0.0;
    let mut gof = 0.0;
    for (&c, &p) in counts.iter().zip(pi.full()) {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        worst_z = worst_z.max((c as f64 / n as f64 - p).abs() / se);
        let expected = p * n as f64;
        gof += (c as f64 - expected).powi(2) / expected;
    }
    ensure(worst_z <= 4.0, || format!("cell deviation {worst_z:.2} standard errors"))?;
    let gof_crit = chi_square_critical(counts.len() - 1, 0.001);
    ensure(gof <= gof_crit, || format!("goodness of fit {gof:.2} > {gof_crit:.2}"))?;

    // both modes pooled over 200 replicates of N = 10^4, tested for homogeneity
    let pooled = |mode, seed| -> Vec<u64> {
        let spec = SimulationSpec::new(q.clone(), 10_000, seed).unwrap();
        let mut acc = vec![0u64; pi.full().len()];
        for t in simulate_replicates(&spec, 200, mode).unwrap() {
            for (a, c) in acc.iter_mut().zip(full_counts(&t)) {
                *a += c;
            }
        }
        acc
    };
    let a = pooled(SamplingMode::Multinomial, DEFAULT_SEED);
    let b = pooled(SamplingMode::PerIndividual, DEFAULT_SEED + 1);
    let (ta, tb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut df = 0;
    for (&x, &y) in a.iter().zip(&b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        df += 1;
        for (obs, total) in [(x as f64, ta), (y as f64, tb)] {
            let expected = col * total / (ta + tb);
            stat += (obs - expected).powi(2) / expected;
        }
    }
    let crit = chi_square_critical(df - 1, 0.001);
    ensure(stat <= crit, || format!("mode homogeneity chi-square {stat:.2} > {crit:.2}"))?;
    Ok(format!(
        "max |z| {worst_z:.2}, GOF {gof:.2} (crit {gof_crit:.2}), mode chi-square {stat:.2} (crit {crit:.2})"
    ))
}

fn em_behaviour() -> Outcome {
    // monotonicity over 100 starts on random tables
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut starts = 0;
    let mut worst_drop: f64 = 0.0;
    for table_idx in 0..20u64 {
        let k = rng.random_range(2..=5);
        let j = rng.random_range(1..=3);
        let truth = random_model(&mut rng, k, j);
        let pop = rng.random_range(500..5000);
        let table = simulate_table(&SimulationSpec::new(truth, pop, table_idx).unwrap()).table;
        if table.total() == 0 {
            continue;
        }
        let config = FitConfig {
            max_outer_iters: 2000,
            ..FitConfig::new(rng.random_range(1..=3), 5, table_idx)
        };
        for r in fit_em(&table, &config).map_err(|e| e.to_string())?.results {
            for w in r.trace.windows(2) {
                worst_drop = worst_drop.min(w[1] - w[0]);
            }
            starts += 1;
        }
    }
    ensure(starts >= 100, || format!("only {starts} starts ran"))?;
    ensure(worst_drop >= -1e-8, || format!("log-likelihood decreased by {}", -worst_drop))?;

    // identifiable regime
    let population = 50_000u64;
    let table = simulate_table(&SimulationSpec::new(five_source_model(), population, DEFAULT_SEED).unwrap()).table;
    let run = fit_em(&table, &FitConfig::new(2, 20, DEFAULT_SEED)).map_err(|e| e.to_string())?;
    let best = run.best();
    let err = (best.n_hat - population as f64).abs() / population as f64;
    ensure(err <= 0.05, || format!("identifiable regime: N_hat {} vs N {population}", best.n_hat))?;

    // nonidentifiable regime
    let table = simulate_table(&SimulationSpec::new(reference_q(), 100_000, DEFAULT_SEED).unwrap()).table;
    let lq = conditional_loglik(&table, &reference_q()).unwrap().value;
    let lr = conditional_loglik(&table, &reference_r()).unwrap().value;
    ensure((lq - lr).abs() <= 1e-6 * lq.abs(), || format!("loglik Q {lq} vs R {lr}"))?;
    let n = table.total() as f64;
    let nq = n / (1.0 - cell_probabilities(&reference_q()).pi0());
    let nr = n / (1.0 - cell_probabilities(&reference_r()).pi0());
    let gap = (nq - nr).abs() / nq.min(nr);
    ensure(gap > 0.10, || format!("N_hat gap {gap:.3}"))?;
    let probe = probe_nonidentifiability(&table, &FitConfig::new(2, 50, DEFAULT_SEED), 0.05).map_err(|e| e.to_string())?;
    ensure(probe.flagged, || format!("probe not flagged: {:?}", probe.clusters[0]))?;

    Ok(format!(
        "{starts} starts, worst step {worst_drop:.1e}; identifiable N_hat err {:.2}%; \
         Q/R N_hat gap {:.1}%; probe spread {:.1}%",
        100.0 * err,
        100.0 * gap,
        100.0 * probe.clusters[0].n_hat_relative_spread
    ))
}

fn fit_bytes(run: &FitRun) -> String {
    let models: Vec<_> = run.results.iter().map(|r| lcm_ident::io::model_to_json(&r.model)).collect();
    serde_json::to_string(&(run, models)).unwrap()
}

fn determinism() -> Outcome {
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
    };
    let spec = SimulationSpec::new(reference_q(), 10_000, DEFAULT_SEED).unwrap();
    let sims = |threads: usize, mode| {
        in_pool(threads).install(|| {
            simulate_replicates(&spec, 200, mode)
                .unwrap()
                .iter()
                .map(full_counts)
                .collect::<Vec<_>>()
        })
    };
    for mode in [SamplingMode::Multinomial, SamplingMode::PerIndividual] {
        let one = sims(1, mode);
        ensure(one == sims(4, mode) && one == sims(1, mode), || format!("{mode:?} replicates differ"))?;
    }

    let table = simulate_table(&SimulationSpec::new(five_source_model(), 50_000, DEFAULT_SEED).unwrap()).table;
    let fits = |threads: usize| in_pool(threads).install(|| fit_bytes(&fit_em(&table, &FitConfig::new(2, 20, DEFAULT_SEED)).unwrap()));
    let one = fits(1);
    ensure(one == fits(4) && one == fits(1), || "EM results differ across runs or thread counts".into())?;

    let table = simulate_table(&SimulationSpec::new(reference_q(), 100_000, DEFAULT_SEED).unwrap()).table;
    let probe = |threads: usize| {
        in_pool(threads).install(|| {
            let p = probe_nonidentifiability(&table, &FitConfig::new(2, 50, DEFAULT_SEED), 0.05).unwrap();
            serde_json::to_string(&p.clusters).unwrap() + &fit_bytes(&p.run)
        })
    };
    ensure(probe(1) == probe(4), || "probe differs across thread counts".into())?;
    Ok("simulation, EM and probe byte-identical across reruns and 1/4 threads".into())
}

struct Criterion {
    title: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { title: "reference pair reproduction", limit: Duration::from_secs(1), run: reference_reproduction },
        Criterion { title: "counterexample sweep", limit: Duration::from_secs(10), run: counterexample_sweep },
        Criterion { title: "decision grid", limit: Duration::from_secs(1), run: decision_grid },
        Criterion { title: "moment transform oracle", limit: Duration::from_secs(5), run: moment_transform_oracle },
        Criterion { title: "moment proportionality equivalence", limit: Duration::from_secs(5), run: proportionality_equivalence },
        Criterion { title: "class-product matrix rank, random draws", limit: Duration::from_secs(10), run: lambda_rank_random },
        Criterion { title: "class-product matrix rank, reference pair", limit: Duration::from_secs(1), run: lambda_rank_reference },
        Criterion { title: "alternating binomial sums", limit: Duration::from_secs(1), run: alternating_sum_identity },
        Criterion { title: "simulation fidelity", limit: Duration::from_secs(30), run: simulation_fidelity },
        Criterion { title: "EM behaviour", limit: Duration::from_secs(180), run: em_behaviour },
        Criterion { title: "determinism", limit: Duration::from_secs(180), run: determinism },
    ];

    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; took {elapsed:.2?}, limit {:?}", c.limit)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {} ({elapsed:.2?}): {detail}", c.title),
            Err(reason) => {
                failures += 1;
                println!("[FAIL] {} ({elapsed:.2?}): {reason}", c.title);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
