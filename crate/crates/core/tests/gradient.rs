use msn_core::data::{copy_sample, kv_sample, reverse_sample};
use msn_core::model::{init_model, ModelConfig, TransformerWeights};
use msn_core::msn::{msn_loss, NoiseConfig};
use msn_core::numerics::{grad_check, GradCheckOptions};

fn tiny(seed: u64) -> TransformerWeights {
    let mut w = init_model(&ModelConfig {
        vocab_size: 259,
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_positions: 96,
        seed,
    })
    .unwrap();
    // nonzero biases so the bias paths are exercised too
    for layer in &mut w.layers {
        for (i, v) in layer.b_qkv.data_mut().iter_mut().enumerate() {
            *v = ((i % 7) as f32 - 3.0) * 0.1;
        }
    }
    w
}

#[test]
fn msn_loss_gradient_matches_finite_differences() {
    let samples = vec![
        copy_sample("abcab"),
        reverse_sample("xyz"),
        kv_sample(&[('a', "pq".into()), ('b', "rst".into())], 'b'),
        kv_sample(
            &[
                ('1', "pqwertyu".into()),
                ('2', "rstasdfg".into()),
                ('3', "zxcvbnmq".into()),
            ],
            '2',
        ),
        copy_sample("abcdefghijklmnopqrstuvwxyzabcdefghijklm"),
    ];
    let noise = NoiseConfig {
        segment_len: 2,
        ..NoiseConfig::default()
    };
    for seed in 0..3 {
        let w = tiny(seed);
        let analytic = msn_loss(&w, &samples, &noise, 7).unwrap().grads.flatten();
        let mut params = w.flatten();
        let mut probe = w.clone();
        let report = grad_check(
            |p| {
                probe.load_flat(p).unwrap();
                msn_loss(&probe, &samples, &noise, 7).unwrap().loss
            },
            &mut params,
            &analytic,
            &GradCheckOptions {
                samples: 400,
                seed,
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert!(report.checked >= 100);
        assert!(report.max_rel_error < 1e-2, "seed {seed}: {report:?}");
    }
}
