use msn_core::data::EOS;
use msn_core::decode::{
    ar_generate, build_tree, generate, jacobi_step, tree_verify, DecodeOptions, DecodeSession, DraftTreeTemplate,
    RetrievalConfig, Strategy, TreeFill,
};
use msn_core::model::{init_model, ModelConfig, TransformerWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = msn_core::data::VOCAB_SIZE;

/// Random weights with a sharpened output head so greedy continuations vary
/// with the context instead of collapsing to one token.
fn model(seed: u64) -> TransformerWeights {
    let mut w = init_model(&ModelConfig {
        vocab_size: VOCAB,
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        max_positions: 64,
        seed,
    })
    .unwrap();
    w.lm_head.scale(40.0);
    w.tok_emb.scale(20.0);
    w
}

fn prompts(seed: u64, n: usize) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=20);
            // small alphabet so suffixes repeat and retrieval finds matches
            (0..len).map(|_| rng.random_range(0..6)).collect()
        })
        .collect()
}

fn strategies() -> Vec<Strategy> {
    let mut v = vec![
        Strategy::Pld(RetrievalConfig::default()),
        Strategy::Tree(DraftTreeTemplate::default().without_retrieval()),
        Strategy::TrJacobi {
            template: DraftTreeTemplate::default(),
            retrieval: RetrievalConfig::default(),
        },
        Strategy::Tree(DraftTreeTemplate::chain(6)),
        Strategy::TrJacobi {
            template: DraftTreeTemplate::parse("0 -1 0\n1 0 0\n2 -1 0\n3 -1 1\n4 3 1\n5 4 1").unwrap(),
            retrieval: RetrievalConfig {
                max_ngram: 2,
                path_len: 3,
            },
        },
    ];
    for m in [1, 2, 3, 4, 8, 16] {
        v.push(Strategy::Jacobi { block_len: m });
    }
    v
}

#[test]
fn every_strategy_reproduces_autoregressive_output() {
    for seed in 0..4 {
        let w = model(seed);
        for (i, prompt) in prompts(100 + seed, 50).iter().enumerate() {
            let opts = DecodeOptions {
                max_new: [0, 1, 7, 30, 64][i % 5],
                seed: i as u64,
            };
            let reference = ar_generate(&w, prompt, opts).unwrap();
            assert_eq!(
                reference.metrics.mat,
                if reference.trace.is_empty() { 0.0 } else { 1.0 }
            );
            for s in strategies() {
                let g = generate(&w, prompt, &s, opts).unwrap();
                assert_eq!(g.tokens, reference.tokens, "{s} on prompt {prompt:?}");
                assert!(g.trace.iter().all(|&c| c >= 1), "{s} made a forward without progress");
                assert_eq!(g.metrics.committed_tokens, g.tokens.len());
                assert_eq!(g.metrics.decode_forwards, g.trace.len());
            }
        }
    }
}

#[test]
fn jacobi_blocks_resolve_within_block_length_forwards() {
    let w = model(9);
    for prompt in prompts(5, 30) {
        for m in [1, 2, 4, 8] {
            let g = generate(
                &w,
                &prompt,
                &Strategy::Jacobi { block_len: m },
                DecodeOptions::default(),
            )
            .unwrap();
            // from any step, m more tokens take at most m forwards
            for start in 0..g.trace.len() {
                let mut got = 0;
                let mut forwards = 0;
                for &c in &g.trace[start..] {
                    if got >= m {
                        break;
                    }
                    got += c;
                    forwards += 1;
                }
                assert!(forwards <= m);
            }
            assert!(g.trace.iter().all(|&c| (1..=m + 1).contains(&c)));
        }
    }
}

/// First prompt (from a fixed stream) whose greedy continuation has no EOS
/// in its first `need` tokens.
fn prompt_with_clean_run(w: &TransformerWeights, need: usize) -> (Vec<u32>, Vec<u32>) {
    for p in prompts(77, 200) {
        let ar = ar_generate(w, &p, DecodeOptions { max_new: need, seed: 0 })
            .unwrap()
            .tokens;
        if ar.len() == need && !ar.contains(&EOS) && p.len() + need + 2 < 64 {
            return (p, ar);
        }
    }
    panic!("no suitable prompt");
}

#[test]
fn jacobi_fixed_point_and_total_miss() {
    let w = model(3);
    let m = 4;
    let (prompt, ar) = prompt_with_clean_run(&w, m + 1);

    let mut s = DecodeSession::start(&w, &prompt, DecodeOptions::default()).unwrap();
    let step = jacobi_step(&mut s, &ar[..m]).unwrap();
    assert_eq!(step.step.committed, ar);
    assert_eq!(step.next_guess.len(), m);

    let mut s = DecodeSession::start(&w, &prompt, DecodeOptions::default()).unwrap();
    let wrong = (ar[0] + 1) % VOCAB as u32;
    let step = jacobi_step(&mut s, &[wrong, ar[1], ar[2], ar[3]]).unwrap();
    assert_eq!(step.step.committed, vec![ar[0]]);
    assert_eq!(step.next_guess.len(), m);
}

#[test]
fn planted_tree_path_is_fully_accepted() {
    let w = model(4);
    let template = DraftTreeTemplate::default();
    let depth = template.main_path().len();
    let (prompt, ar) = prompt_with_clean_run(&w, depth + 1);
    let wrong = |t: u32, k: u32| (t + 1 + k) % VOCAB as u32;
    let roots = [ar[0], wrong(ar[0], 0), wrong(ar[0], 1), wrong(ar[0], 2)];

    let mut s = DecodeSession::start(&w, &prompt, DecodeOptions::default()).unwrap();
    let fill = TreeFill {
        roots: Some(&roots),
        continuation: &ar[1..depth],
        retrieval: Some(&[wrong(ar[0], 3)]),
    };
    let state = build_tree(&template, s.anchor(), s.anchor_position(), fill, || wrong(ar[0], 4));
    let step = tree_verify(&mut s, &template, &state).unwrap();
    assert_eq!(step.accept_len, depth);
    assert_eq!(step.committed, ar[..depth + 1]);
    assert_eq!(step.next_roots, None);
    // rejection is monotone: no accepted node below a rejected one
    for (n, node) in template.nodes().iter().enumerate() {
        if let Some(p) = node.parent {
            assert!(!step.accepted[n] || step.accepted[p]);
        }
    }
}

#[test]
fn tree_total_miss_commits_only_the_bonus() {
    let w = model(4);
    let template = DraftTreeTemplate::default();
    let (prompt, ar) = prompt_with_clean_run(&w, 2);
    let other = (ar[0] + 1) % VOCAB as u32;
    let mut s = DecodeSession::start(&w, &prompt, DecodeOptions::default()).unwrap();
    let state = build_tree(&template, s.anchor(), s.anchor_position(), TreeFill::default(), || {
        other
    });
    let step = tree_verify(&mut s, &template, &state).unwrap();
    assert_eq!(step.accept_len, 0);
    assert!(step.accepted.iter().all(|&a| !a));
    assert_eq!(step.committed, vec![ar[0]]);
    assert_eq!(step.next_roots.as_ref().map(Vec::len), Some(template.k()));
}

#[test]
fn eos_inside_a_draft_ends_the_output() {
    // a head that always predicts EOS: drafts beyond it must be dropped
    let mut w = model(1);
    w.lm_head.fill(0.0);
    for r in 0..w.lm_head.rows() {
        w.lm_head.set(r, EOS as usize, 1.0);
    }
    w.lnf_beta.fill(1.0);
    for s in strategies() {
        let g = generate(&w, &[1, 2, 3], &s, DecodeOptions::default()).unwrap();
        assert_eq!(g.tokens, vec![EOS], "{s}");
        assert_eq!(g.trace, vec![1]);
    }
}
