use mdp_core::vector::relative_error;
use mdp_core::*;
use proptest::prelude::*;

fn setup(sc: &Scenario) -> Sampler<'_> {
    Sampler::new(&sc.model, &sc.grid, &sc.schedule).unwrap()
}

fn full(amplitude: f64) -> ScheduleSpec {
    ScheduleSpec::constant(0, 50, 50, amplitude).unwrap()
}

fn edit(sc: &Scenario, cfg: &ManipulationConfig, seed: u64) -> EditResult {
    setup(sc)
        .run_edit(
            &sc.initial_noise(seed),
            &sc.source,
            &sc.target,
            cfg,
            &HookRegistry::default(),
        )
        .unwrap()
}

fn path(sc: &Scenario, c: &ConditionEmbedding, seed: u64) -> PathRecord {
    setup(sc)
        .generate(&sc.initial_noise(seed), c, None)
        .unwrap()
}

fn cfg(
    sc: &Scenario,
    kind: ManipulationKind,
    schedule: ScheduleSpec,
    beta: Option<f64>,
) -> ManipulationConfig {
    ManipulationConfig::for_scenario(kind, schedule, beta, sc)
}

#[test]
fn full_weight_interpolation_reproduces_source_path() {
    let sc = Scenario::demo();
    let a = path(&sc, &sc.source, 1);
    for kind in [
        ManipulationKind::Pni,
        ManipulationKind::Idi,
        ManipulationKind::Cei,
    ] {
        let r = edit(&sc, &cfg(&sc, kind, full(1.0), None), 1);
        assert_eq!(r.path.latents, a.latents, "{kind}");
        assert!(r.weights.iter().all(|&w| w == 1.0));
    }
}

#[test]
fn zero_weight_reproduces_target_path() {
    let sc = Scenario::demo();
    let b = path(&sc, &sc.target, 2);
    for kind in ManipulationKind::ALL {
        let beta = (kind == ManipulationKind::G).then_some(-0.3);
        let r = edit(&sc, &cfg(&sc, kind, full(0.0), beta), 2);
        assert_eq!(r.path.latents, b.latents, "{kind}");
        assert!(r.weights.iter().all(|&w| w == 0.0));
    }
    let r = edit(
        &sc,
        &cfg(&sc, ManipulationKind::G, full(1.0), Some(-1.0)),
        2,
    );
    for (x, y) in r.path.latents.iter().zip(&b.latents) {
        assert!(relative_error(x, y) <= 1e-9);
    }
}

#[test]
fn neutral_guidance_reproduces_source_generation() {
    let sc = Scenario::demo();
    let a = path(&sc, &sc.source, 3);
    let r = edit(&sc, &cfg(&sc, ManipulationKind::G, full(1.0), Some(0.0)), 3);
    assert_eq!(r.path.latents, a.latents);
}

#[test]
fn steps_outside_window_denoise_with_target() {
    let sc = Scenario::demo();
    let s = setup(&sc);
    let window = ScheduleSpec::constant(25, 40, 50, 0.6).unwrap();
    for kind in ManipulationKind::ALL {
        let beta = (kind == ManipulationKind::G).then_some(-0.4);
        let r = edit(&sc, &cfg(&sc, kind, window, beta), 4);
        for (i, &w) in r.weights.iter().enumerate() {
            let t = sc.grid.sampling_index(i);
            assert_eq!(w == 0.0, !(25..=40).contains(&t));
            if w == 0.0 {
                let x = &r.path.latents[i];
                let eps = s.predict(x, &sc.target, i).unwrap();
                assert_eq!(
                    s.step(x, &eps, i).unwrap(),
                    r.path.latents[i + 1],
                    "{kind} step {i}"
                );
            }
        }
    }
}

#[test]
fn mask_extremes_match_interpolation() {
    let sc = Scenario::demo();
    let window = ScheduleSpec::constant(20, 45, 50, 1.0).unwrap();
    let d = sc.dim();
    for (masked, interp) in [
        (ManipulationKind::Pnm, ManipulationKind::Pni),
        (ManipulationKind::Idm, ManipulationKind::Idi),
    ] {
        let ones = edit(
            &sc,
            &ManipulationConfig::new(masked, window).with_mask(BinaryMask::ones(d)),
            5,
        );
        let w1 = edit(&sc, &ManipulationConfig::new(interp, window), 5);
        assert_eq!(ones.path, w1.path, "{masked} ones");
        let zeros = edit(
            &sc,
            &ManipulationConfig::new(masked, window).with_mask(BinaryMask::zeros(d)),
            5,
        );
        let w0 = edit(&sc, &ManipulationConfig::new(interp, full(0.0)), 5);
        assert_eq!(zeros.path.latents, w0.path.latents, "{masked} zeros");
    }
}

#[test]
fn partial_mask_mixes_coordinates() {
    let sc = Scenario::demo();
    let window = ScheduleSpec::constant(0, 50, 50, 1.0).unwrap();
    let a = path(&sc, &sc.source, 6);
    let r = edit(&sc, &cfg(&sc, ManipulationKind::Idm, window, None), 6);
    // first coordinate masked in: copied from path A at every step
    for (x, y) in r.path.latents.iter().zip(&a.latents) {
        assert_eq!(x[0], y[0]);
    }
    assert_ne!(r.path.endpoint()[1], a.endpoint()[1]);
}

#[test]
fn edits_replay_consistently() {
    let sc = Scenario::demo();
    let window = ScheduleSpec::constant(15, 45, 50, 0.8).unwrap();
    for kind in ManipulationKind::ALL {
        let beta = (kind == ManipulationKind::G).then_some(-0.5);
        let r = edit(&sc, &cfg(&sc, kind, window, beta), 7);
        assert_eq!(r.path.latents.len(), r.path.noises.len() + 1);
        assert!(r.path.replay_error(&sc.schedule) < 1e-9, "{kind}");
    }
}

/// Unit-variance Gaussian: ε_c(x, ᾱ) = √(1−ᾱ)(x − √ᾱ μ_c), so the edited
/// path obeys a scalar recursion that can be stepped without the sampler.
fn pni_recursion(sc: &Scenario, x_t: &[f64], w: f64) -> Vec<f64> {
    let mu_a = sc.model.component_mean(0, &sc.source);
    let mu_b = sc.model.component_mean(0, &sc.target);
    let table = sc.schedule.as_slice();
    let steps = sc.grid.steps();
    let eps = |x: &[f64], mu: &[f64], a: f64| -> Vec<f64> {
        x.iter()
            .zip(mu)
            .map(|(xi, m)| (1.0 - a).sqrt() * (xi - a.sqrt() * m))
            .collect()
    };
    let mut xa = x_t.to_vec();
    let mut xs = x_t.to_vec();
    for (i, &step) in steps.iter().enumerate() {
        let a = table[step];
        let p = if i + 1 < steps.len() {
            table[steps[i + 1]]
        } else {
            1.0
        };
        let carry = (p / a).sqrt();
        let gain = (1.0 - p).sqrt() - carry * (1.0 - a).sqrt();
        let ea = eps(&xa, &mu_a, a);
        let eb = eps(&xs, &mu_b, a);
        xs = (0..xs.len())
            .map(|r| carry * xs[r] + gain * (w * ea[r] + (1.0 - w) * eb[r]))
            .collect();
        xa = (0..xa.len())
            .map(|r| carry * xa[r] + gain * ea[r])
            .collect();
    }
    xs
}

#[test]
fn pni_matches_scalar_recursion() {
    let sc = Scenario::single_gaussian();
    let x_t = sc.initial_noise(8);
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let got = edit(&sc, &cfg(&sc, ManipulationKind::Pni, full(w), None), 8);
        let expected = pni_recursion(&sc, &x_t, w);
        assert!(
            relative_error(got.path.endpoint(), &expected) < 1e-9,
            "w={w}"
        );
    }
}

#[test]
fn prompt_switch_extremes_and_cei_equivalence() {
    let sc = Scenario::demo();
    let s = setup(&sc);
    let x_t = sc.initial_noise(9);
    let a = s.generate(&x_t, &sc.source, None).unwrap();
    let b = s.generate(&x_t, &sc.target, None).unwrap();
    assert_eq!(
        s.prompt_switch(&x_t, &sc.source, &sc.target, 50)
            .unwrap()
            .latents,
        a.latents
    );
    assert_eq!(
        s.prompt_switch(&x_t, &sc.source, &sc.target, 0)
            .unwrap()
            .latents,
        b.latents
    );
    assert!(s.prompt_switch(&x_t, &sc.source, &sc.target, 51).is_err());
    let switched = s.prompt_switch(&x_t, &sc.source, &sc.target, 20).unwrap();
    let cei = edit(
        &sc,
        &cfg(
            &sc,
            ManipulationKind::Cei,
            ScheduleSpec::constant(31, 50, 50, 1.0).unwrap(),
            None,
        ),
        9,
    );
    assert_eq!(switched, cei.path);
}

#[test]
fn cam_hooks() {
    let sc = Scenario::demo();
    let s = setup(&sc);
    let a = path(&sc, &sc.source, 10);
    let window = ScheduleSpec::constant(30, 50, 50, 1.0).unwrap();
    let replay = edit(&sc, &cfg(&sc, ManipulationKind::Cam, window, None), 10);
    // replay within a window that opens at T tracks path A exactly
    for i in 0..=20 {
        assert_eq!(replay.path.latents[i], a.latents[i]);
    }
    let identity = edit(
        &sc,
        &ManipulationConfig::new(ManipulationKind::Cam, window).with_cam_hook("identity"),
        10,
    );
    for i in 0..20 {
        let eps = s.predict(&a.latents[i], &sc.target, i).unwrap();
        let expected = s.step(&a.latents[i], &eps, i).unwrap();
        assert!(relative_error(&identity.path.latents[i + 1], &expected) < 1e-15);
    }
    let unknown = ManipulationConfig::new(ManipulationKind::Cam, window).with_cam_hook("p2p");
    assert!(s
        .run_edit(
            &sc.initial_noise(0),
            &sc.source,
            &sc.target,
            &unknown,
            &HookRegistry::default()
        )
        .is_err());
}

struct AttentionHook;

impl CamHook for AttentionHook {
    fn name(&self) -> &str {
        "attention"
    }
    fn requires_attention(&self) -> bool {
        true
    }
    fn apply(&self, ctx: &CamContext<'_>) -> Result<NoisePrediction> {
        Ok(ctx.noise_a.clone())
    }
}

#[test]
fn attention_hooks_need_introspection() {
    let sc = Scenario::demo();
    let mut hooks = HookRegistry::default();
    hooks.register(std::sync::Arc::new(AttentionHook));
    let window = ScheduleSpec::constant(30, 50, 50, 1.0).unwrap();
    let config = ManipulationConfig::new(ManipulationKind::Cam, window).with_cam_hook("attention");
    let err = setup(&sc).run_edit(
        &sc.initial_noise(0),
        &sc.source,
        &sc.target,
        &config,
        &hooks,
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn out_of_range_guidance_is_recorded() {
    let sc = Scenario::demo();
    let r = edit(
        &sc,
        &cfg(&sc, ManipulationKind::G, full(1.0), Some(0.5)),
        11,
    );
    assert_eq!(r.warnings.len(), 1);
    assert!(r.path.endpoint().is_finite());
}

#[test]
fn schedule_shapes_drive_weights() {
    let sc = Scenario::demo();
    let lin = ScheduleSpec::new(ScheduleKind::Linear, 30, 50, 50, 1.0).unwrap();
    let r = edit(&sc, &cfg(&sc, ManipulationKind::Pni, lin, None), 12);
    assert_eq!(r.weights[0], 1.0);
    assert_eq!(r.weights[10], 0.5);
    assert_eq!(r.weights[20], 0.0);
    assert!(r.weights[21..].iter().all(|&w| w == 0.0));
}

proptest! {
    #[test]
    fn interior_guidance_is_interpolation(
        a in prop::collection::vec(-10.0f64..10.0, 1..16),
        seed in any::<u64>(),
        beta in prop::sample::select(vec![-0.9, -0.5, -0.1]),
    ) {
        let mut s = SeedStream::new(seed);
        let b: Vec<f64> = a.iter().map(|_| 10.0 * s.next_gaussian()).collect();
        let guided: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + beta * (x - y)).collect();
        let interp = lerp(&a, &b, 1.0 + beta);
        for (g, l) in guided.iter().zip(&interp) {
            prop_assert!((g - l).abs() <= 1e-12 * (1.0 + g.abs()));
        }
    }

    #[test]
    fn lerp_full_weight_returns_first(a in prop::collection::vec(-1e6f64..1e6, 0..8), seed in any::<u64>()) {
        let mut s = SeedStream::new(seed);
        let b: Vec<f64> = a.iter().map(|_| s.next_gaussian()).collect();
        prop_assert_eq!(lerp(&a, &b, 1.0), a.clone());
        prop_assert_eq!(lerp(&a, &b, 0.0), b);
    }
}
