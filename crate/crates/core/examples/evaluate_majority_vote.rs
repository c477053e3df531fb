//! Chunk-level versus file-level scoring on a tiny hand-made example.

use labelprop::evaluation::{self, EvalOptions};

fn main() -> labelprop::Result<()> {
    let classes = vec!["bhairavi".to_string(), "yaman".to_string(), "others".to_string()];
    let files = ["a", "a", "a", "b", "b", "b", "c", "c"];
    let truth = [0, 0, 0, 1, 1, 1, 2, 2];
    // None marks chunks the propagation could not reach.
    let pred = [Some(0), Some(1), Some(0), Some(1), None, Some(1), None, Some(0)];

    let opts = EvalOptions { others_class: Some(2), ..Default::default() };
    let chunk = evaluation::chunk_metrics(&pred, &truth, &classes, opts)?;
    let file = evaluation::file_metrics(&pred, &truth, &files, &classes, opts)?;
    print!("{}", chunk.to_table(true));
    print!("{}", file.to_table(true));
    println!("vote over [yaman, abstain, yaman]: {:?}", evaluation::majority_vote([Some(1), None, Some(1)]));
    Ok(())
}
