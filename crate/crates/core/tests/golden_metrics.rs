//! Scores on the checked-in 20-sentence fixture must match the values the
//! reference scorers produced (fixtures/golden/expected.json) to 0.01.

use std::path::PathBuf;

use mtpipe_core::metrics::{
    bleu_with, chrf, chrf_with, ter, ter_with, BleuConfig, ChrfConfig, Components, Smoothing, TerAggregation,
    TerConfig, TokenizationMode,
};
use serde_json::Value;

const TOL: f64 = 0.01;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn lines(name: &str) -> Vec<String> {
    std::fs::read_to_string(fixture_dir().join(name))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn expected() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("expected.json")).unwrap()).unwrap()
}

fn counts(v: &Value) -> Vec<u64> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

#[test]
fn bleu_matches_reference_scorer() {
    let (hyp, reference, exp) = (lines("hyp.txt"), lines("ref.txt"), expected());
    for tok in [TokenizationMode::Intl, TokenizationMode::None] {
        for smooth in [Smoothing::None, Smoothing::Exp] {
            let key = format!("bleu_{tok}_{}", if smooth == Smoothing::None { "none" } else { "exp" });
            let want = &exp[&key];
            let cfg = BleuConfig {
                tokenize: tok,
                smoothing: smooth,
                lowercase: false,
            };
            let got = bleu_with(&hyp, &reference, cfg).unwrap();
            let Components::Bleu(stats) = &got.components else { panic!() };
            assert_eq!(stats.matches.to_vec(), counts(&want["counts"]), "{key} matches");
            assert_eq!(stats.totals.to_vec(), counts(&want["totals"]), "{key} totals");
            assert_eq!(stats.hyp_len, want["sys_len"].as_u64().unwrap());
            assert_eq!(stats.ref_len, want["ref_len"].as_u64().unwrap());
            assert!((stats.brevity_penalty - want["bp"].as_f64().unwrap()).abs() < 1e-12);
            let score = want["score"].as_f64().unwrap();
            assert!((got.score - score).abs() < TOL, "{key}: {} vs {score}", got.score);
        }
    }
}

#[test]
fn bleu_smoothing_on_short_segments() {
    let exp = expected();
    let strs = |k: &str| -> Vec<String> {
        exp[k].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
    };
    let (hyp, reference) = (strs("short_hyp"), strs("short_ref"));
    for (smooth, key) in [(Smoothing::None, "short_bleu_none"), (Smoothing::Exp, "short_bleu_exp")] {
        let cfg = BleuConfig {
            tokenize: TokenizationMode::None,
            smoothing: smooth,
            lowercase: false,
        };
        let got = bleu_with(&hyp, &reference, cfg).unwrap();
        let want = exp[key]["score"].as_f64().unwrap();
        assert!((got.score - want).abs() < TOL, "{key}: {} vs {want}", got.score);
    }
}

#[test]
fn chrf_matches_reference_scorer() {
    let (hyp, reference, exp) = (lines("hyp.txt"), lines("ref.txt"), expected());
    let got = chrf(&hyp, &reference).unwrap().score;
    let want = exp["chrf"].as_f64().unwrap();
    assert!((got - want).abs() < TOL, "{got} vs {want}");

    let lc = ChrfConfig {
        lowercase: true,
        ..Default::default()
    };
    let got = chrf_with(&hyp, &reference, lc).unwrap().score;
    assert!((got - exp["chrf_lowercase"].as_f64().unwrap()).abs() < TOL);
}

#[test]
fn ter_matches_reference_scorer() {
    let (hyp, reference, exp) = (lines("hyp.txt"), lines("ref.txt"), expected());
    for (i, seg) in exp["ter_segments"].as_array().unwrap().iter().enumerate() {
        let r = ter(&hyp[i..=i], &reference[i..=i]).unwrap();
        let Components::Ter(stats) = &r.components else { panic!() };
        assert_eq!(stats.edits.total(), seg["edits"].as_u64().unwrap(), "segment {i}");
        assert!((r.score - seg["ter"].as_f64().unwrap()).abs() < 1e-12, "segment {i}");
    }
    let corpus = ter(&hyp, &reference).unwrap().score;
    assert!((corpus - exp["ter_corpus"].as_f64().unwrap()).abs() < TOL);

    let avg_cfg = TerConfig {
        aggregation: TerAggregation::SentenceAverage,
        ..Default::default()
    };
    let avg = ter_with(&hyp, &reference, avg_cfg).unwrap().score;
    assert!((avg - exp["ter_sentence_average"].as_f64().unwrap()).abs() < TOL);
}
