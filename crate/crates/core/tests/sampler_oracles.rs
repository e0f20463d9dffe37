use mdp_core::vector::{distance, relative_error};
use mdp_core::*;

fn unit_gaussian() -> GmmDenoiser {
    GmmDenoiser::new(
        2,
        1,
        vec![GmmComponent {
            weight: 1.0,
            base_mean: vec![0.0, 0.0],
            condition_map: vec![0.0, 0.0],
            variance: 1.0,
        }],
    )
    .unwrap()
}

fn point_mass(mean: Vec<f64>) -> GmmDenoiser {
    GmmDenoiser::new(
        mean.len(),
        1,
        vec![GmmComponent {
            weight: 1.0,
            condition_map: vec![0.0; mean.len()],
            base_mean: mean,
            variance: 0.0,
        }],
    )
    .unwrap()
}

fn c0() -> ConditionEmbedding {
    ConditionEmbedding::new(vec![0.0])
}

/// Importance-sampled `E[ε | x_t, c]` using draws from the clean-data law.
fn monte_carlo_noise(
    model: &GmmDenoiser,
    x: &[f64],
    c: &ConditionEmbedding,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    let mut s = SeedStream::new(seed);
    let comps = model.components();
    let d = x.len();
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    let mut samples = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for _ in 0..n {
        let u = s.next_uniform();
        let mut acc = 0.0;
        let mut k = comps.len() - 1;
        for (i, comp) in comps.iter().enumerate() {
            acc += comp.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let comp = &comps[k];
        let x0: Vec<f64> = (0..d)
            .map(|r| {
                let shift: f64 = (0..c.dim())
                    .map(|j| comp.condition_map[r * c.dim() + j] * c.values()[j])
                    .sum();
                comp.base_mean[r] + shift + comp.variance.sqrt() * s.next_gaussian()
            })
            .collect();
        let sq: f64 = (0..d).map(|r| (x[r] - alpha.sqrt() * x0[r]).powi(2)).sum();
        log_w.push(-sq / (2.0 * (1.0 - alpha)));
        samples.push(x0);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (x0, lw) in samples.iter().zip(&log_w) {
        let w = (lw - max).exp();
        den += w;
        for r in 0..d {
            num[r] += w * x0[r];
        }
    }
    (0..d)
        .map(|r| (x[r] - alpha.sqrt() * num[r] / den) / (1.0 - alpha).sqrt())
        .collect()
}

#[test]
fn predict_noise_matches_monte_carlo() {
    let sc = Scenario::demo();
    let mut s = SeedStream::new(2024);
    for point in 0..4 {
        let alpha = 0.15 + 0.7 * s.next_uniform();
        let c = ConditionEmbedding::new(vec![
            2.0 * s.next_uniform() - 1.0,
            2.0 * s.next_uniform() - 1.0,
        ]);
        let x0 = sc.sample_data(&c, 1, &s.split(point))[0].clone();
        let x: Vec<f64> = x0
            .iter()
            .map(|v| alpha.sqrt() * v + (1.0 - alpha).sqrt() * s.next_gaussian())
            .collect();
        let exact = sc
            .model
            .predict_noise(&Latent(x.clone()), &c, 0, alpha)
            .unwrap();
        let mc = monte_carlo_noise(&sc.model, &x, &c, alpha, 200_000, 77 + point);
        let err = relative_error(&exact, &mc);
        assert!(err <= 0.02, "point {point}: relative error {err}");
    }
}

#[test]
fn generate_matches_affine_recursion() {
    let model = unit_gaussian();
    let schedule = AlphaSchedule::default();
    let grid = TimestepGrid::new(1000, 50).unwrap();
    let x_t = Latent(vec![0.7, -1.3]);
    let path = generate(&model, &x_t, &c0(), &grid, &schedule, None).unwrap();
    // ε = √(1−ᾱ) x and f = √ᾱ x, so each step multiplies by
    // √ᾱ_prev √ᾱ_t + √(1−ᾱ_prev) √(1−ᾱ_t).
    let table = schedule.as_slice();
    let mut factor = 1.0;
    for (i, &step) in grid.steps().iter().enumerate() {
        let a = table[step];
        let p = if i + 1 < grid.len() {
            table[grid.steps()[i + 1]]
        } else {
            1.0
        };
        factor *= (p * a).sqrt() + ((1.0 - p) * (1.0 - a)).sqrt();
    }
    let expected = [0.7 * factor, -1.3 * factor];
    assert!(relative_error(path.endpoint(), &expected) < 1e-12);
}

#[test]
fn single_step_generation() {
    let model = unit_gaussian();
    let schedule = AlphaSchedule::default();
    let grid = TimestepGrid::new(1000, 1).unwrap();
    let path = generate(
        &model,
        &Latent(vec![1.0, 2.0]),
        &c0(),
        &grid,
        &schedule,
        None,
    )
    .unwrap();
    assert_eq!(path.latents.len(), 2);
    assert_eq!(path.noises.len(), 1);
    let direct = f_theta(&path.latents[0], &path.noises[0], schedule.alpha_bar(1000)).unwrap();
    assert_eq!(path.endpoint(), &direct);
}

#[test]
fn generation_is_deterministic_and_replayable() {
    let sc = Scenario::demo();
    let x_t = sc.initial_noise(9);
    let s = Sampler::new(&sc.model, &sc.grid, &sc.schedule).unwrap();
    let a = s.generate(&x_t, &sc.source, None).unwrap();
    let b = s.generate(&x_t, &sc.source, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.replay(&sc.schedule), a.latents[1..].to_vec());
    let guided = s
        .generate(
            &x_t,
            &sc.source,
            Some(&Guidance::shared(3.0, sc.conditions.null_embedding())),
        )
        .unwrap();
    assert_eq!(guided.replay(&sc.schedule), guided.latents[1..].to_vec());
    let inv = s.invert(a.endpoint(), &sc.source).unwrap();
    assert_eq!(inv.direction, Direction::Inversion);
    assert!(inv.replay_error(&sc.schedule) < 1e-14);
}

#[test]
fn superposition_for_affine_denoiser() {
    let sc = Scenario::single_gaussian();
    let s = Sampler::new(&sc.model, &sc.grid, &sc.schedule).unwrap();
    let gen = |x: Vec<f64>| {
        s.generate(&Latent(x), &sc.source, None)
            .unwrap()
            .endpoint()
            .clone()
    };
    let x1 = vec![0.3, -1.1];
    let x2 = vec![1.7, 0.4];
    let lhs = vector::add(&gen(vector::add(&x1, &x2)), &gen(vec![0.0, 0.0]));
    let rhs = vector::add(&gen(x1), &gen(x2));
    assert!(relative_error(&lhs, &rhs) < 1e-9);
}

#[test]
fn inversion_of_point_mass_is_scalar_recursion() {
    let model = point_mass(vec![0.0, 0.0]);
    let schedule = AlphaSchedule::default();
    let grid = TimestepGrid::new(1000, 20).unwrap();
    let x0 = Latent(vec![0.25, -0.5]);
    let inv = ddim_invert(&model, &x0, &c0(), &grid, &schedule).unwrap();
    let table = schedule.as_slice();
    let mut levels: Vec<usize> = grid.steps().to_vec();
    levels.push(0);
    levels.reverse();
    let mut coef = 1.0;
    for w in levels.windows(2) {
        let (cur, next) = (table[w[0]], table[w[1]]);
        // ε = x/√(1−ᾱ_next); f = (x − √(1−ᾱ_cur) ε)/√ᾱ_cur; x' = √ᾱ_next f + x.
        coef *= next.sqrt() * (1.0 - ((1.0 - cur) / (1.0 - next)).sqrt()) / cur.sqrt() + 1.0;
    }
    let expected = [0.25 * coef, -0.5 * coef];
    assert!(relative_error(inv.endpoint(), &expected) < 1e-12);
}

#[test]
fn point_mass_round_trip_is_exact() {
    let model = point_mass(vec![0.5, 1.0]);
    let schedule = AlphaSchedule::default();
    for steps in [1, 50] {
        let grid = TimestepGrid::new(1000, steps).unwrap();
        let x0 = Latent(vec![0.5, 1.0]);
        let inv = ddim_invert(&model, &x0, &c0(), &grid, &schedule).unwrap();
        let regen = generate(&model, inv.endpoint(), &c0(), &grid, &schedule, None).unwrap();
        assert!(relative_error(regen.endpoint(), &x0) <= 1e-9);
    }
}

#[test]
fn inversion_error_shrinks_with_finer_grids() {
    let sc = Scenario::demo();
    let rows = inversion_report(&sc.model, &sc, 8, &[50, 100, 200], 3).unwrap();
    assert!(rows[0].mean_error <= 5e-2);
    for w in rows.windows(2) {
        assert!(w[1].mean_error <= w[0].mean_error, "{rows:?}");
    }
    let pm = Scenario::point_mass();
    let rows = inversion_report(&pm.model, &pm, 3, &[50], 3).unwrap();
    assert!(rows[0].max_error <= 1e-9);
    assert!(inversion_report(&sc.model, &sc, 0, &[50], 3).is_err());
    let once = inversion_report(&sc.model, &sc, 1, &[25], 11).unwrap();
    assert_eq!(
        once,
        inversion_report(&sc.model, &sc, 1, &[25], 11).unwrap()
    );
}

#[test]
fn null_text_without_guidance_keeps_initial_embedding() {
    let sc = Scenario::demo();
    let s = Sampler::new(&sc.model, &sc.grid, &sc.schedule).unwrap();
    let x0 = sc.sample_data(&sc.source, 1, &SeedStream::new(1))[0].clone();
    let null = sc.conditions.null_embedding();
    let nt = s
        .null_text_invert(&x0, &sc.source, 0.0, &null, &NullTextOptions::default())
        .unwrap();
    assert!(nt.embeddings.iter().all(|e| e == &null));
    let plain = s
        .generate(nt.inversion.endpoint(), &sc.source, None)
        .unwrap();
    assert_eq!(
        relative_error(nt.reconstruction.endpoint(), &x0),
        relative_error(plain.endpoint(), &x0)
    );

    let opts = NullTextOptions {
        iterations: 0,
        ..NullTextOptions::default()
    };
    let nt = s
        .null_text_invert(&x0, &sc.source, 2.0, &null, &opts)
        .unwrap();
    assert!(nt.embeddings.iter().all(|e| e == &null));
}

#[test]
fn null_text_objective_never_increases() {
    let sc = Scenario::demo();
    let s = Sampler::new(&sc.model, &sc.grid, &sc.schedule).unwrap();
    let null = sc.conditions.null_embedding();
    for x0 in sc.sample_data(&sc.source, 3, &SeedStream::new(8)) {
        let nt = s
            .null_text_invert(&x0, &sc.source, 2.0, &null, &NullTextOptions::default())
            .unwrap();
        assert_eq!(nt.embeddings.len(), sc.grid.len());
        for step in &nt.steps {
            assert!(step.history.windows(2).all(|w| w[1] <= w[0]), "{step:?}");
            assert!(step.final_objective <= step.initial_objective);
        }
        let baseline = s
            .generate(
                nt.inversion.endpoint(),
                &sc.source,
                Some(&Guidance::shared(2.0, null.clone())),
            )
            .unwrap();
        assert!(distance(nt.reconstruction.endpoint(), &x0) <= distance(baseline.endpoint(), &x0));
    }
}

#[test]
fn dimension_and_schedule_errors() {
    let sc = Scenario::demo();
    let s = Sampler::new(&sc.model, &sc.grid, &sc.schedule).unwrap();
    assert!(matches!(
        s.generate(&Latent(vec![0.0]), &sc.source, None),
        Err(Error::DimensionMismatch { what: "latent", .. })
    ));
    assert!(s
        .generate(
            &Latent(vec![0.0, 0.0]),
            &ConditionEmbedding::new(vec![1.0]),
            None
        )
        .is_err());
    let short = AlphaSchedule::linear_beta(10, 1e-4, 0.02).unwrap();
    assert!(Sampler::new(&sc.model, &sc.grid, &short).is_err());
    let per_step = Guidance {
        beta: 1.0,
        nulls: NullEmbeddings::PerStep(vec![sc.conditions.null_embedding(); 3]),
    };
    assert!(s
        .generate(&sc.initial_noise(0), &sc.source, Some(&per_step))
        .is_err());
}
