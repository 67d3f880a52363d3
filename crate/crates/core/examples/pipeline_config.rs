//! Resolve a pipeline config: task presets, dotted overrides and validation.

use bioext::pipeline::PipelineConfig;

const CONFIG: &str = r#"
task = "pharmaco"
seed = 7
folds = 3

[paths]
work_dir = "work/pharmaco"

[tagger]
epochs = 50

[relation]
tau = 10
"#;

fn main() -> bioext::Result<()> {
    let overrides = ["ranking.alpha=0".to_string(), "flags.nested=true".to_string()];
    let cfg = PipelineConfig::from_toml(CONFIG, &overrides)?;
    cfg.validate()?;
    println!(
        "task {:?}: word_dim {} (preset), epochs {}, alpha {}, tagger seed {}, nested {}",
        cfg.task, cfg.tagger.word_dim, cfg.tagger.epochs, cfg.tagger.ranking.alpha, cfg.tagger.seed, cfg.flags.nested
    );
    match PipelineConfig::from_toml("[tagger]\nwrod_dim = 3\n", &[]) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("unknown keys are refused"),
    }
    Ok(())
}
