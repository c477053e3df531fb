//! Writes a synthetic Gaussian-blob dataset to disk.
//!
//!     cargo run --example generate_dataset -- /tmp/blobs 7

use std::path::PathBuf;

use labelprop::dataset::{self, SyntheticConfig};

fn main() -> labelprop::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "blobs".into()));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));

    let cfg = SyntheticConfig { seed, chunks_per_file: 5, ..Default::default() };
    let (emb, manifest) = dataset::generate_synthetic(&cfg)?;
    std::fs::create_dir_all(&out)?;
    emb.save(&out.join("embeddings.lpem"))?;
    manifest.save(&out.join("manifest.jsonl"))?;

    println!("{} items, {} dims, {} classes", emb.n(), emb.d(), manifest.num_classes());
    println!("{} labeled, {} held out for evaluation", manifest.labeled_count(), manifest.eval_indices().len());
    println!("wrote {}", out.display());
    Ok(())
}
