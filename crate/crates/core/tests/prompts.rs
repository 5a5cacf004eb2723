use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softsense_core::encoder::build_windows;
use softsense_core::model::TEXT_EMBEDDING;
use softsense_core::prompts::*;
use softsense_core::*;

#[test]
fn minimal_text_prompt() {
    let t = PromptTemplate::new("", "", &["V1"]);
    let s = Series::new(vec![3.0], 1, None).unwrap();
    let w = &build_windows(&s, 1, 1).unwrap()[0];
    assert_eq!(render_text_prompt(&t, w, "00:10:50").unwrap(), "time: 00:10:50\nV1: 3.0000\n");
}

#[test]
fn full_window_prompt() {
    let t = PromptTemplate::standard(5);
    let s = Series::new((0..100).map(|i| i as f64 * 0.123456).collect(), 5, None).unwrap();
    let w = &build_windows(&s, 20, 1).unwrap()[0];
    let a = render_text_prompt(&t, w, "01:00:00").unwrap();
    assert_eq!(a, render_text_prompt(&t, w, "01:00:00").unwrap());
    let value_lines = a.lines().filter(|l| l.starts_with('V') && l.contains(": ")).count();
    assert_eq!(value_lines, 100);
    assert!(a.contains("V2: 0.1235\n"));
    assert!(a.starts_with(DEFAULT_BACKGROUND));
    assert!(a.ends_with(&format!("{DEFAULT_INSTRUCTION}\n")));
    assert!(render_text_prompt(&PromptTemplate::standard(4), w, "x").is_err());
}

#[test]
fn prefix_prompt_lists_names_only() {
    let t = PromptTemplate::new(SHORT_BACKGROUND, SHORT_INSTRUCTION, &["V1", "V2", "V3"]);
    let p = render_prefix_prompt(&t, "12:34:56");
    assert_eq!(p, "Air preheater\ntime: 12:34:56\nV1,V2,V3\nPredict deformation\n");
    assert_eq!(p, render_prefix_prompt(&t, "12:34:56"));
    assert!(!p.is_empty());
    assert!(!p.contains(": 0"));
}

#[test]
fn clock_and_tokens() {
    assert_eq!(clock_time(650.0), "00:10:50");
    assert_eq!(clock_time(86_400.0 + 3661.0), "01:01:01");
    assert_eq!(tokenize_text("AB"), vec![65, 66]);
    assert_eq!(pad_left(&[1, 2], 4).unwrap(), vec![PAD_ID, PAD_ID, 1, 2]);
    assert!(matches!(pad_left(&[1, 2, 3], 2), Err(Error::SequenceTooLong { .. })));
    assert_eq!(detokenize(&pad_left(&tokenize_text("héllo"), 10).unwrap()), "héllo".as_bytes());
}

proptest! {
    #[test]
    fn byte_round_trip(s in ".*") {
        prop_assert_eq!(detokenize(&tokenize_text(&s)), s.as_bytes());
    }
}

fn prefix_model() -> Model {
    let mut cfg = ModelConfig::new(2);
    cfg.backbone = BackboneConfig { d_model: 8, n_heads: 2, n_layers: 2, n_ctx: 32, ..BackboneConfig::default() };
    cfg.freeze = FreezePolicy { frozen_layers: 1, lora_layers: 1 };
    cfg.lora.rank = 2;
    let mut m = Model::new(cfg, 1).unwrap();
    m.prepare_stage1(2).unwrap();
    m.add_text_embedding(3).unwrap();
    m
}

fn hidden(m: &Model, x: &[f64], prefix: Option<&[usize]>) -> (Tensor, usize) {
    let mut g = Graph::new();
    let mut b = Batch::new(x, 1, x.len() / 2);
    if let Some(ids) = prefix {
        b = b.with_prefix(ids, ids.len());
    }
    let enc = m.encode(&mut g, &b).unwrap();
    (g.value(enc.hidden).clone(), enc.data_offset)
}

#[test]
fn prefix_concatenation() {
    let m = prefix_model();
    let x = Tensor::randn(&[6, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(4)).into_data();
    let (plain, _) = hidden(&m, &x, None);
    let (empty, off) = hidden(&m, &x, Some(&[]));
    assert_eq!(plain, empty);
    assert_eq!(off, 0);

    let ids = tokenize_text("Air");
    let (joined, off) = hidden(&m, &x, Some(&ids));
    assert_eq!(joined.shape(), &[9, 8]);
    assert_eq!(off, 3);

    let mut y = x.clone();
    y[10] += 2.0;
    let (perturbed, _) = hidden(&m, &y, Some(&ids));
    assert_eq!(&joined.data()[..3 * 8], &perturbed.data()[..3 * 8]);

    let table = m.params.get(TEXT_EMBEDDING).unwrap();
    assert_eq!(table.shape(), &[VOCAB_SIZE, 8]);
    let long: Vec<usize> = vec![PAD_ID; 27];
    let mut g = Graph::new();
    assert!(matches!(m.encode(&mut g, &Batch::new(&x, 1, 6).with_prefix(&long, 27)), Err(Error::SequenceTooLong { len: 33, n_ctx: 32 })));
}

#[test]
fn prefix_embedding_rows_come_from_the_table() {
    let m = prefix_model();
    let ids = vec![65, 66, PAD_ID];
    let mut g = Graph::new();
    let table = g.param(&m.params, TEXT_EMBEDDING).unwrap();
    let e = g.embedding(table, ids.clone()).unwrap();
    let t = m.params.get(TEXT_EMBEDDING).unwrap();
    for (r, &id) in ids.iter().enumerate() {
        assert_eq!(g.value(e).row(r), t.row(id));
    }
}
