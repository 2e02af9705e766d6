use granlab::gradcheck::{grad_check, grad_check_sampled};
use granlab::gran::{sample_prior, Discriminator, GranConfig, Generator, GeneratorStats, Ladder, Noise, NoiseMode};
use granlab::nn::{randomize_params, Activation, Layer, Mode, Module, Sequential};
use granlab::{Error, Graph, Tensor};

fn tiny_ring(steps: usize, noise: NoiseMode) -> GranConfig {
    let mut c = GranConfig::ring(steps);
    c.z_dim = 3;
    c.hidden = 4;
    c.ladder = Ladder::Dense { widths: vec![6, 5] };
    c.noise = noise;
    c.init_std = 0.5;
    c
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Linear => x,
        Activation::Relu => x.max(0.0),
        Activation::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

/// Plain-loop evaluation of a dense-only stack on one vector.
fn mlp(net: &Sequential<f64>, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in &net.layers {
        h = match layer {
            Layer::Dense(d) => {
                let (o, i) = (d.weight.shape()[0], d.weight.shape()[1]);
                assert_eq!(i, h.len());
                (0..o)
                    .map(|r| {
                        let s: f64 = (0..i).map(|c| d.weight.data()[r * i + c] * h[c]).sum();
                        act(d.activation, s + d.bias.data()[r])
                    })
                    .collect()
            }
            Layer::Activation(a) => h.iter().map(|&v| act(*a, v)).collect(),
            other => panic!("oracle handles dense stacks only, got {other:?}"),
        };
    }
    h
}

fn oracle_canvas(gen: &Generator<f64>, z: &[Vec<f64>]) -> Vec<f64> {
    let c = &gen.config;
    let mut prev = vec![0.0; c.canvas[0]];
    let mut total = vec![0.0; c.canvas[0]];
    for t in 0..c.steps {
        let h_c = mlp(&gen.encoder, &prev);
        let zt = if z.len() == 1 { &z[0] } else { &z[t] };
        let h_z: Vec<f64> = (0..c.hidden)
            .map(|r| {
                let s: f64 = (0..c.z_dim).map(|k| gen.embed.weight.data()[r * c.z_dim + k] * zt[k]).sum();
                (s + gen.embed.bias.data()[r]).tanh()
            })
            .collect();
        let joint: Vec<f64> = h_z.iter().chain(&h_c).copied().collect();
        let delta = mlp(&gen.decoder, &joint);
        for (a, d) in total.iter_mut().zip(&delta) {
            *a += d;
        }
        prev = delta;
    }
    total.iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.slice_rows(i, i + 1).unwrap().into_data()).collect()
}

#[test]
fn zero_parameters_give_half_canvas() {
    for config in [GranConfig::ring(3), GranConfig::shapes(2)] {
        let mut gen = Generator::<f64>::init(config, 1).unwrap();
        let zeros: Vec<_> = gen.param_tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        gen.set_params(&zeros).unwrap();
        let out = gen.sample(5, 9).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }
}

#[test]
fn recurrence_matches_plain_loop_oracle() {
    for steps in [1, 3] {
        for noise in [NoiseMode::Shared, NoiseMode::PerStep] {
            let gen = Generator::<f64>::init(tiny_ring(steps, noise), 7).unwrap();
            let nz = gen.sample_noise(4, 11).unwrap();
            let got = gen.generate(&nz).unwrap().canvas;
            let per_step: Vec<Vec<Vec<f64>>> = nz.tensors().iter().map(|t| rows(t)).collect();
            for i in 0..4 {
                let z: Vec<Vec<f64>> = per_step.iter().map(|s| s[i].clone()).collect();
                let want = oracle_canvas(&gen, &z);
                let have = got.slice_rows(i, i + 1).unwrap();
                for (a, b) in have.data().iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "steps {steps} {noise:?}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn canvas_is_sigmoid_of_summed_updates() {
    let gen = Generator::<f64>::init(GranConfig::shapes(3), 2).unwrap();
    let out = gen.generate(&gen.sample_noise(3, 4).unwrap()).unwrap();
    assert_eq!(out.deltas.len(), 3);
    let mut sum = out.deltas[0].clone();
    for d in &out.deltas[1..] {
        sum = sum.add(d).unwrap();
    }
    let want = sum.map(|s| 1.0 / (1.0 + (-s).exp()));
    assert!(out.canvas.max_abs_diff(&want).unwrap() < 1e-12);
}

#[test]
fn shared_noise_reuses_embedding_and_per_step_does_not() {
    let gen = Generator::<f64>::init(tiny_ring(4, NoiseMode::Shared), 3).unwrap();
    let out = gen.generate(&gen.sample_noise(6, 5).unwrap()).unwrap();
    for h in &out.h_z[1..] {
        assert_eq!(h, &out.h_z[0]);
    }

    let gen = Generator::<f64>::init(tiny_ring(4, NoiseMode::PerStep), 3).unwrap();
    let noise = gen.sample_noise(6, 5).unwrap();
    let Noise::PerStep(zs) = &noise else { panic!("expected per-step noise") };
    assert_eq!(zs.len(), 4);
    assert_eq!(zs[0], sample_prior::<f64>(3, 6, 5).unwrap());
    let out = gen.generate(&noise).unwrap();
    assert_ne!(out.h_z[0], out.h_z[1]);
}

#[test]
fn parameters_are_shared_across_steps() {
    let counts: Vec<usize> = [1, 3, 5]
        .iter()
        .map(|&t| Generator::<f32>::init(GranConfig::mnist(t), 0).unwrap().param_count())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
    let a = Generator::<f32>::init(GranConfig::mnist(1), 4).unwrap();
    let b = Generator::<f32>::init(GranConfig::mnist(5), 4).unwrap();
    assert_eq!(a.param_tensors(), b.param_tensors());
}

#[test]
fn mnist_generator_and_discriminator_shapes() {
    let gen = Generator::<f32>::init(GranConfig::mnist(2), 0).unwrap();
    let x = gen.sample(4, 1).unwrap();
    assert_eq!(x.shape(), &[4, 1, 28, 28]);
    assert!(x.data().iter().all(|&v| v > 0.0 && v < 1.0));

    let ladder = gen.decoder.shape_ladder(&[200]).unwrap();
    let mirrored = gen.encoder.shape_ladder(&[1, 28, 28]).unwrap();
    assert!(ladder.contains(&vec![80, 7, 7]) && ladder.contains(&vec![40, 14, 14]));
    assert!(mirrored.contains(&vec![80, 7, 7]) && mirrored.contains(&vec![40, 14, 14]));
    assert_eq!(mirrored.last().unwrap(), &vec![100]);

    let d = Discriminator::<f32>::init(GranConfig::mnist(2), 0).unwrap();
    let s = d.discriminate(&x).unwrap();
    assert_eq!(s.len(), 4);
    assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
    assert!(matches!(
        d.discriminate(&Tensor::zeros(&[2, 1, 27, 28])),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn constant_discriminator_scores_every_input_alike() {
    let d = Discriminator::<f64>::constant(GranConfig::shapes(1), 0.3).unwrap();
    let x = Tensor::from_fn(&[7, 1, 8, 8], |i| (i % 5) as f64 / 5.0);
    for p in d.discriminate(&x).unwrap() {
        assert!((p - 0.3).abs() < 1e-12);
    }
    assert!(Discriminator::<f64>::constant(GranConfig::shapes(1), 1.0).is_err());
}

#[test]
fn wrong_noise_count_is_a_contract_error() {
    let gen = Generator::<f64>::init(tiny_ring(3, NoiseMode::PerStep), 0).unwrap();
    let mut g = Graph::new();
    let vars = gen.bind(&mut g, false).unwrap().vars;
    let z = g.constant(Tensor::zeros(&[2, 3]));
    let err = gen.unroll(&mut g, &vars, &[z], Mode::Eval, &mut GeneratorStats::default());
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn backprop_through_time_matches_finite_differences() {
    for noise in [NoiseMode::Shared, NoiseMode::PerStep] {
        // Zero biases put the first step exactly on the activation kinks.
        let mut gen = Generator::<f64>::init(tiny_ring(3, noise), 21).unwrap();
        randomize_params(&mut gen, 0.5, 4);
        let nz: Vec<Tensor<f64>> = gen.sample_noise(2, 8).unwrap().tensors().into_iter().cloned().collect();
        let mut inputs = gen.param_tensors();
        let np = inputs.len();
        inputs.extend(nz);
        let report = grad_check(
            |g, v| {
                let vars = gen.vars_from(&v[..np])?;
                let u = gen.unroll(g, &vars, &v[np..], Mode::Eval, &mut GeneratorStats::default())?;
                let sq = g.mul(u.canvas, u.canvas)?;
                Ok(g.sum(sq))
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{noise:?}: {report:?}");
    }
}

#[test]
fn conv_generator_gradients_in_training_mode() {
    let mut c = GranConfig::shapes(2);
    c.init_std = 0.3;
    let gen = Generator::<f64>::init(c, 5).unwrap();
    let mut inputs = gen.param_tensors();
    let np = inputs.len();
    inputs.push(sample_prior(16, 3, 2).unwrap());
    let report = grad_check_sampled(
        |g, v| {
            let vars = gen.vars_from(&v[..np])?;
            let u = gen.unroll(g, &vars, &v[np..], Mode::Train, &mut GeneratorStats::default())?;
            let w = g.constant(Tensor::from_fn(&[3, 1, 8, 8], |i| ((i * 7) % 11) as f64 / 11.0));
            let p = g.mul(u.canvas, w)?;
            Ok(g.sum(p))
        },
        &inputs,
        1e-6,
        4,
        1,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn perturbing_the_decoder_moves_every_step() {
    let gen = Generator::<f64>::init(tiny_ring(4, NoiseMode::Shared), 8).unwrap();
    let noise = gen.sample_noise(5, 2).unwrap();
    let before = gen.generate(&noise).unwrap();
    let mut moved = gen.clone();
    moved.decoder.params_mut()[0].data_mut()[0] += 0.05;
    let after = moved.generate(&noise).unwrap();
    for (t, (a, b)) in before.deltas.iter().zip(&after.deltas).enumerate() {
        assert!(a.max_abs_diff(b).unwrap() > 0.0, "step {t} unchanged");
    }
}

#[test]
fn per_step_noise_with_equal_draws_reduces_to_shared() {
    let shared = Generator::<f64>::init(tiny_ring(3, NoiseMode::Shared), 6).unwrap();
    let mut per_step = shared.clone();
    per_step.config.noise = NoiseMode::PerStep;
    let z = sample_prior::<f64>(3, 4, 9).unwrap();
    let a = shared.generate(&Noise::Shared(z.clone())).unwrap();
    let b = per_step.generate(&Noise::PerStep(vec![z; 3])).unwrap();
    assert_eq!(a.canvas, b.canvas);
    assert_eq!(a.deltas, b.deltas);
}
