use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const TAGS: [(&str, &str, &str); 6] = [
    ("NOUN", "Number=Sing", "en"),
    ("NOUN", "Number=Plur", "ar"),
    ("VERB", "Tense=Past", "ade"),
    ("VERB", "Tense=Pres", "ir"),
    ("ADJ", "Degree=Cmp", "are"),
    ("ADP", "_", "u"),
];

const STEMS: [&str; 8] = ["kal", "bol", "trul", "pel", "stal", "gril", "mol", "flel"];

/// A tiny suffix language; sources are word-for-word translations.
fn corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<(String, usize)>> {
    (0..n)
        .map(|_| {
            (0..rng.random_range(3..9))
                .map(|_| {
                    let t = rng.random_range(0..TAGS.len());
                    let stem = STEMS[rng.random_range(0..STEMS.len())];
                    (format!("{stem}{}", TAGS[t].2), t)
                })
                .collect()
        })
        .collect()
}

fn conllu(sentences: &[Vec<(String, usize)>], prefix: &str) -> String {
    let mut out = String::new();
    for s in sentences {
        for (k, (w, t)) in s.iter().enumerate() {
            let (pos, feats, _) = TAGS[*t];
            out.push_str(&format!("{}\t{prefix}{w}\t_\t{pos}\t_\t{feats}\t_\t_\t_\t_\n", k + 1));
        }
        out.push('\n');
    }
    out
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train = corpus(&mut rng, 400);
        let test = corpus(&mut rng, 60);
        let bitext: String = train
            .iter()
            .map(|s| {
                let src: Vec<String> = s.iter().map(|(w, _)| format!("s_{w}")).collect();
                let tgt: Vec<&str> = s.iter().map(|(w, _)| w.as_str()).collect();
                format!("{} ||| {}\n", src.join(" "), tgt.join(" "))
            })
            .collect();
        fs::write(dir.path().join("bitext.txt"), bitext).unwrap();
        fs::write(dir.path().join("source.conllu"), conllu(&train, "s_")).unwrap();
        fs::write(dir.path().join("target_train.conllu"), conllu(&train, "")).unwrap();
        fs::write(dir.path().join("test.conllu"), conllu(&test, "")).unwrap();
        let raw: String = test
            .iter()
            .map(|s| s.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ") + "\n")
            .collect();
        fs::write(dir.path().join("test.txt"), raw).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_morphproj"))
            .current_dir(self.dir.path())
            .args(args)
            .env_remove("MORPHPROJ_THREADS")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap()
    }

    fn manifest(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(&format!("{name}.manifest.json"))).unwrap()
    }

    fn align_and_project(&self) {
        self.ok(&[
            "align", "--bitext", "bitext.txt", "--out-forward", "fwd.txt", "--out-reverse", "rev.txt",
            "--out-bitext", "kept.txt",
        ]);
        self.ok(&[
            "project", "--bitext", "kept.txt", "--source", "source.conllu", "--forward", "fwd.txt", "--reverse",
            "rev.txt", "--out-dictionary", "dict.tsv", "--out-lattices", "lattices.txt",
        ]);
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn full_pipeline_and_manifests() {
    let f = Fixture::new();
    f.align_and_project();
    let m = f.manifest("lattices.txt");
    assert_eq!(m["command"], "project");
    assert_eq!(m["config"]["alpha"], 0.8);
    assert_eq!(m["config"]["beta"], 0.3);
    assert_eq!(m["inputs"]["bitext"]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["counters"]["links_kept"].as_u64().unwrap() > 0);
    assert!(f.read("dict.tsv").contains("kalen\tNOUN|Number=Sing"));

    f.ok(&["train", "--model", "wsabie", "--lattices", "lattices.txt", "--epochs", "5", "--out", "w.json"]);
    let m = f.manifest("w.json");
    assert_eq!(m["config"]["constraints"], "type");
    let mc = &m["config"]["model_config"];
    assert_eq!(mc["learning_rate"], 0.01);
    assert_eq!(mc["dim"], 50);
    assert_eq!(mc["margin"], 0.1);
    assert_eq!(m["seed"], 0);

    f.ok(&["train", "--model", "hmm", "--lattices", "lattices.txt", "--out", "h.json"]);
    for model in ["w", "h"] {
        let tagged = format!("{model}.conllu");
        let report = format!("{model}.tsv");
        f.ok(&["tag", "--model", &format!("{model}.json"), "--input", "test.txt", "--out", &tagged]);
        f.ok(&[
            "evaluate", "--gold", "test.conllu", "--predicted", &tagged, "--mode", "pos", "--out", &report,
        ]);
        let acc = f.manifest(&report)["counters"]["pos_accuracy"].as_f64().unwrap();
        assert!(acc >= 0.9, "{model}: POS accuracy {acc}");
    }
}

#[test]
fn default_wsabie_manifest_records_published_settings() {
    let f = Fixture::new();
    f.align_and_project();
    f.ok(&["train", "--model", "wsabie", "--constraints", "type", "--lattices", "lattices.txt", "--out", "w.json"]);
    let mc = &f.manifest("w.json")["config"]["model_config"];
    assert_eq!((mc["learning_rate"].as_f64(), mc["dim"].as_u64()), (Some(0.01), Some(50)));
    assert_eq!((mc["margin"].as_f64(), mc["epochs"].as_u64()), (Some(0.1), Some(25)));
}

#[test]
fn evaluate_identity_scores_one() {
    let f = Fixture::new();
    f.ok(&[
        "evaluate", "--gold", "test.conllu", "--predicted", "test.conllu", "--source-train", "target_train.conllu",
        "--target-train", "target_train.conllu", "--out", "r.tsv",
    ]);
    let report = f.read("r.tsv");
    assert!(report.contains("MACRO_F1\t1.000000\n"), "{report}");
    assert!(report.starts_with("POS\t"));
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let f = Fixture::new();
    f.align_and_project();
    let mut outputs = Vec::new();
    for threads in ["1", "3", "1"] {
        f.ok(&[
            "--threads", threads, "train", "--model", "wsabie", "--lattices", "lattices.txt", "--epochs", "3",
            "--seed", "9", "--out", "w.json",
        ]);
        f.ok(&["--threads", threads, "train", "--model", "hmm", "--lattices", "lattices.txt", "--max-iterations", "10", "--out", "h.json"]);
        f.ok(&["--threads", threads, "tag", "--model", "h.json", "--input", "test.txt", "--out", "h.conllu"]);
        outputs.push(
            ["w.json", "w.json.manifest.json", "h.json", "h.conllu", "h.conllu.manifest.json"]
                .map(|n| f.read(n)),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let f = Fixture::new();
    fs::write(f.path("run.cfg"), "# grid point\nbeta = 0.6\nalpha=0.5\n").unwrap();
    f.ok(&[
        "align", "--bitext", "bitext.txt", "--out-forward", "fwd.txt", "--out-reverse", "rev.txt",
    ]);
    f.ok(&[
        "project", "--config", "run.cfg", "--alpha", "0.9", "--bitext", "bitext.txt", "--source", "source.conllu",
        "--forward", "fwd.txt", "--reverse", "rev.txt", "--out-dictionary", "d.tsv", "--out-lattices", "l.txt",
    ]);
    let m = f.manifest("l.txt");
    assert_eq!(m["config"]["alpha"], 0.9);
    assert_eq!(m["config"]["beta"], 0.6);
    assert!(m["inputs"]["config"]["sha256"].is_string());

    fs::write(f.path("bad.cfg"), "epochs=3\n").unwrap();
    let out = f.run(&[
        "project", "--config", "bad.cfg", "--bitext", "bitext.txt", "--source", "source.conllu", "--forward",
        "fwd.txt", "--reverse", "rev.txt", "--out-dictionary", "d.tsv", "--out-lattices", "l.txt",
    ]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn supervised_training_variants() {
    let f = Fixture::new();
    f.ok(&[
        "supervised-train", "--gold", "target_train.conllu", "--model", "hmm", "--first-n-tokens", "1000",
        "--out", "s.json",
    ]);
    let m = f.manifest("s.json");
    assert_eq!(m["counters"]["labelled_tokens"], 1000);
    f.ok(&[
        "supervised-train", "--gold", "target_train.conllu", "--model", "wsabie", "--epochs", "2",
        "--restrict-attributes", "Number", "--out", "r.json",
    ]);
    let model: Value = serde_json::from_str(&f.read("r.json")).unwrap();
    assert!(!model["inventory"].to_string().contains("Tense"));
    f.ok(&["train", "--model", "hmm", "--constraints", "gold", "--gold", "target_train.conllu", "--max-iterations", "5", "--out", "g.json"]);
    f.ok(&[
        "train", "--model", "wsabie", "--constraints", "oracle", "--gold", "target_train.conllu", "--text", "test.txt",
        "--epochs", "2", "--out", "o.json",
    ]);
}

#[test]
fn cluster_writes_one_line_per_word() {
    let f = Fixture::new();
    f.ok(&["cluster", "--corpus", "test.txt", "--num-clusters", "4", "--out", "c.tsv"]);
    let text = f.read("c.tsv");
    assert!(text.lines().all(|l| l.split('\t').nth(1).unwrap().parse::<u32>().unwrap() < 4));
    f.align_and_project();
    f.ok(&[
        "train", "--model", "wsabie", "--lattices", "lattices.txt", "--clusters", "c.tsv", "--epochs", "2", "--out", "w.json",
    ]);
    f.ok(&["tag", "--model", "w.json", "--input", "test.txt", "--clusters", "c.tsv", "--out", "t.conllu"]);
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    // Unknown flag and missing required option: usage errors.
    assert_eq!(exit_code(&f.run(&["align", "--bogus"])), 1);
    assert_eq!(exit_code(&f.run(&["train", "--model", "hmm", "--out", "x.json"])), 1);
    // Missing input file: data error.
    let out = f.run(&["cluster", "--corpus", "nope.txt", "--out", "c.tsv"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
    // A file that is not a model.
    fs::write(f.path("junk.json"), "{\"format\": \"something-else\"}").unwrap();
    assert_eq!(exit_code(&f.run(&["tag", "--model", "junk.json", "--input", "test.txt", "--out", "t.conllu"])), 2);
    // Lattices built for one constraint mode cannot train under another.
    f.align_and_project();
    let out = f.run(&["train", "--model", "hmm", "--constraints", "type+token", "--lattices", "lattices.txt", "--out", "h.json"]);
    assert_eq!(exit_code(&out), 1);
    assert_eq!(exit_code(&f.run(&["--help"])), 0);
}

#[test]
fn tag_leaves_inputs_alone() {
    let f = Fixture::new();
    f.ok(&["supervised-train", "--gold", "target_train.conllu", "--model", "hmm", "--max-iterations", "3", "--out", "m.json"]);
    let before = (f.read("m.json"), f.read("test.conllu"));
    f.ok(&["tag", "--model", "m.json", "--input", "test.conllu", "--format", "conllu", "--out", "t.conllu"]);
    assert_eq!(before, (f.read("m.json"), f.read("test.conllu")));
    let out = f.run(&["tag", "--model", "m.json", "--input", "test.conllu", "--format", "conllu", "--out", "test.conllu"]);
    assert_eq!(exit_code(&out), 1);
    assert_eq!(before.1, f.read("test.conllu"));
}

#[test]
fn manifest_location_can_be_chosen() {
    let f = Fixture::new();
    let manifest: &Path = &f.path("custom.json");
    f.ok(&[
        "--manifest", manifest.to_str().unwrap(), "cluster", "--corpus", "test.txt", "--num-clusters", "2", "--out",
        "c.tsv",
    ]);
    assert!(manifest.exists());
    assert!(!f.path("c.tsv.manifest.json").exists());
}
