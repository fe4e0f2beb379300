//! Experiment manifests: a key-value text file listing the synthesis
//! profile, per-language utterance files, and the curriculum stages.
//!
//! Format (`#MANIFEST1` header, one directive per line):
//!
//! ```text
//! #MANIFEST1
//! dim 8
//! kmin 2
//! kmax 4
//! noise_sigma 0.1
//! seed 42
//! language KA ka_train.txt ka_test.txt
//! language EN en_train.txt en_test.txt
//! stage steps=2000 init=random KA=1 EN=1
//! stage steps=1500 init=checkpoint:stage0.ckpt KA=3 EN=3 ES=4
//! ```
//!
//! Relative paths are resolved against the manifest's directory on load.

use super::schedule::{MixSchedule, Stage, StageInit};
use super::{CorpusError, SynthProfile};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageEntry {
    pub name: String,
    pub train_path: PathBuf,
    pub test_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct StageSpec {
    pub stage: Stage,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub profile: SynthProfile,
    pub languages: Vec<LanguageEntry>,
    pub schedule: MixSchedule,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CorpusError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "#MANIFEST1")) => {}
            _ => return Err(CorpusError::Manifest("missing #MANIFEST1 header".into())),
        }
        let mut profile = SynthProfile::default();
        let mut languages = Vec::new();
        let mut stages = Vec::new();
        for (lineno, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line");
            let err = |msg: String| CorpusError::Manifest(format!("line {}: {msg}", lineno + 1));
            match key {
                "dim" | "kmin" | "kmax" | "seed" => {
                    let v: u64 = parts
                        .next()
                        .ok_or_else(|| err(format!("{key} needs a value")))?
                        .parse()
                        .map_err(|e| err(format!("{key}: {e}")))?;
                    match key {
                        "dim" => profile.dim = v as usize,
                        "kmin" => profile.kmin = v as usize,
                        "kmax" => profile.kmax = v as usize,
                        _ => profile.seed = v,
                    }
                }
                "noise_sigma" => {
                    profile.noise_sigma = parts
                        .next()
                        .ok_or_else(|| err("noise_sigma needs a value".into()))?
                        .parse()
                        .map_err(|e| err(format!("noise_sigma: {e}")))?;
                }
                "language" => {
                    let name = parts
                        .next()
                        .ok_or_else(|| err("language needs a name".into()))?
                        .to_string();
                    let train = parts
                        .next()
                        .ok_or_else(|| err("language needs a train path".into()))?;
                    let test = parts.next();
                    languages.push(LanguageEntry {
                        name,
                        train_path: base.join(train),
                        test_path: test.map(|t| base.join(t)),
                    });
                }
                "stage" => {
                    let mut steps = None;
                    let mut init = StageInit::Random;
                    let mut ratios = BTreeMap::new();
                    for field in parts {
                        let (k, v) = field
                            .split_once('=')
                            .ok_or_else(|| err(format!("stage field {field} needs key=value")))?;
                        match k {
                            "steps" => {
                                steps =
                                    Some(v.parse().map_err(|e| err(format!("steps: {e}")))?);
                            }
                            "init" => {
                                init = if v == "random" {
                                    StageInit::Random
                                } else if let Some(p) = v.strip_prefix("checkpoint:") {
                                    StageInit::FromCheckpoint(base.join(p))
                                } else {
                                    return Err(err(format!(
                                        "init must be random or checkpoint:<path>, got {v}"
                                    )));
                                };
                            }
                            lang => {
                                let ratio: f64 =
                                    v.parse().map_err(|e| err(format!("ratio {lang}: {e}")))?;
                                ratios.insert(lang.to_string(), ratio);
                            }
                        }
                    }
                    let stage = Stage {
                        ratios,
                        steps: steps.ok_or_else(|| err("stage needs steps=".into()))?,
                        init,
                    };
                    stage.validate().map_err(err)?;
                    stages.push(stage);
                }
                other => return Err(err(format!("unknown directive {other}"))),
            }
        }
        profile.validate()?;
        Ok(Manifest {
            profile,
            languages,
            schedule: MixSchedule { stages },
        })
    }

    /// Serializes back to manifest text; paths are written as given.
    pub fn render(&self) -> String {
        let mut out = String::from("#MANIFEST1\n");
        let p = &self.profile;
        let _ = writeln!(out, "dim {}", p.dim);
        let _ = writeln!(out, "kmin {}", p.kmin);
        let _ = writeln!(out, "kmax {}", p.kmax);
        let _ = writeln!(out, "noise_sigma {}", p.noise_sigma);
        let _ = writeln!(out, "seed {}", p.seed);
        for lang in &self.languages {
            match &lang.test_path {
                Some(test) => {
                    let _ = writeln!(
                        out,
                        "language {} {} {}",
                        lang.name,
                        lang.train_path.display(),
                        test.display()
                    );
                }
                None => {
                    let _ = writeln!(out, "language {} {}", lang.name, lang.train_path.display());
                }
            }
        }
        for stage in &self.schedule.stages {
            let _ = write!(out, "stage steps={}", stage.steps);
            match &stage.init {
                StageInit::Random => {
                    let _ = write!(out, " init=random");
                }
                StageInit::FromCheckpoint(p) => {
                    let _ = write!(out, " init=checkpoint:{}", p.display());
                }
            }
            for (lang, ratio) in &stage.ratios {
                let _ = write!(out, " {lang}={ratio}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// Reads one utterance per non-empty line of a language's train or test
    /// file.
    pub fn load_utterances(path: &Path, language: &str) -> Result<Vec<super::Utterance>, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        Ok(text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| super::Utterance::new(l, language))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "#MANIFEST1\n\
        dim 8\n\
        kmin 2\n\
        kmax 4\n\
        noise_sigma 0.1\n\
        seed 42\n\
        language KA ka_train.txt ka_test.txt\n\
        language EN en_train.txt\n\
        stage steps=100 init=random KA=1 EN=1\n\
        stage steps=50 init=checkpoint:stage0.ckpt KA=3 EN=3\n";

    #[test]
    fn parse_sample() {
        let m = Manifest::parse(SAMPLE, Path::new("/base")).unwrap();
        assert_eq!(m.profile.dim, 8);
        assert_eq!(m.profile.seed, 42);
        assert_eq!(m.languages.len(), 2);
        assert_eq!(m.languages[0].train_path, PathBuf::from("/base/ka_train.txt"));
        assert_eq!(
            m.languages[0].test_path,
            Some(PathBuf::from("/base/ka_test.txt"))
        );
        assert_eq!(m.languages[1].test_path, None);
        assert_eq!(m.schedule.stages.len(), 2);
        assert_eq!(m.schedule.stages[0].steps, 100);
        assert!(matches!(
            &m.schedule.stages[1].init,
            StageInit::FromCheckpoint(p) if p == &PathBuf::from("/base/stage0.ckpt")
        ));
        assert_eq!(m.schedule.stages[1].ratios["KA"], 3.0);
    }

    #[test]
    fn missing_header_is_rejected() {
        assert!(matches!(
            Manifest::parse("dim 8\n", Path::new(".")),
            Err(CorpusError::Manifest(_))
        ));
    }

    #[test]
    fn unknown_directive_is_rejected_with_line_number() {
        let text = "#MANIFEST1\nbogus 1\n";
        match Manifest::parse(text, Path::new(".")) {
            Err(CorpusError::Manifest(msg)) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn render_parses_back() {
        let m = Manifest::parse(SAMPLE, Path::new("")).unwrap();
        let rendered = m.render();
        let again = Manifest::parse(&rendered, Path::new("")).unwrap();
        assert_eq!(again.profile, m.profile);
        assert_eq!(again.languages, m.languages);
        assert_eq!(again.schedule.stages.len(), m.schedule.stages.len());
    }
}
