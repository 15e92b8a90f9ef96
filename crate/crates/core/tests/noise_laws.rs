use char2subword::noise::{
    apply_op, editable_len, sample_noisy_traced, KeyboardLayout, NoiseConfig, NoiseError, NoiseOp,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur.push(sub.min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

fn is_adjacent_swap(a: &[char], b: &[char]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    diff.len() == 2 && diff[1] == diff[0] + 1 && a[diff[0]] == b[diff[1]] && a[diff[1]] == b[diff[0]]
}

fn body(token: &str) -> Vec<char> {
    token.strip_prefix("##").unwrap_or(token).chars().collect()
}

fn token_strategy() -> impl Strategy<Value = String> {
    ("[a-zA-Z0-9]{5,12}", any::<bool>()).prop_map(|(w, m)| if m { format!("##{w}") } else { w })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_op_obeys_its_law(token in token_strategy(), seed in any::<u64>(), op_i in 0usize..6) {
        let op = NoiseOp::ALL[op_i];
        let cfg = NoiseConfig::default();
        let layout = KeyboardLayout::qwerty();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = match apply_op(&token, op, &mut rng, &cfg) {
            Ok(out) => out,
            Err(NoiseError::NoEffect(_)) => {
                prop_assert!(matches!(op, NoiseOp::Swap | NoiseOp::Toggle));
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        };
        prop_assert_ne!(&out, &token);
        prop_assert_eq!(token.starts_with("##"), out.starts_with("##"));
        let (a, b) = (body(&token), body(&out));
        match op {
            NoiseOp::Mistype => {
                prop_assert_eq!(a.len(), b.len());
                let i = (0..a.len()).find(|&i| a[i] != b[i]).unwrap();
                prop_assert_eq!(levenshtein(&a, &b), 1);
                let allowed = layout.neighbors(a[i]).map(|n| n.contains(&b[i])).unwrap_or(true);
                prop_assert!(allowed);
            }
            NoiseOp::Repeat => {
                prop_assert_eq!(b.len(), a.len() + 1);
                let i = (0..a.len()).find(|&i| a[i] != b[i]).unwrap_or(a.len());
                prop_assert_eq!(b[i], b[i - 1]);
            }
            NoiseOp::Swap => prop_assert!(is_adjacent_swap(&a, &b)),
            NoiseOp::Drop => {
                prop_assert_eq!(b.len() + 1, a.len());
                prop_assert_eq!(levenshtein(&a, &b), 1);
            }
            NoiseOp::Toggle => {
                prop_assert_eq!(a.len(), b.len());
                let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
                prop_assert_eq!(diff.len(), 1);
                let i = diff[0];
                prop_assert_eq!(a[i].to_lowercase().to_string(), b[i].to_lowercase().to_string());
            }
            NoiseOp::Punctuation => {
                prop_assert_eq!(b.len(), a.len() + 1);
                prop_assert_eq!(levenshtein(&a, &b), 1);
                let extra = b.iter().find(|c| cfg.punctuation_set.contains(c));
                prop_assert!(extra.is_some());
            }
        }
    }

    #[test]
    fn short_and_special_tokens_pass_through(token in "[a-z]{1,4}", seed in any::<u64>()) {
        let cfg = NoiseConfig { p_noise: 1.0, ..NoiseConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in [token.clone(), format!("##{token}"), "[UNK]".to_string(), "[unused12]".to_string()] {
            let (out, op) = sample_noisy_traced(&t, &mut rng, &cfg);
            prop_assert_eq!(out, t);
            prop_assert_eq!(op, None);
        }
        let marked = format!("##{}", token);
        prop_assert!(editable_len(&marked) < 5);
    }

    #[test]
    fn zero_probability_is_identity(token in token_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, op) = sample_noisy_traced(&token, &mut rng, &NoiseConfig::disabled());
        prop_assert_eq!(out, token);
        prop_assert_eq!(op, None);
    }
}

#[test]
fn noise_rate_tracks_p_noise() {
    let cfg = NoiseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 20_000;
    let fired = (0..n)
        .filter(|_| sample_noisy_traced("keyboard", &mut rng, &cfg).1.is_some())
        .count();
    let rate = fired as f64 / n as f64;
    // 0.5 ± 4 standard deviations
    assert!((rate - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{rate}");
}
