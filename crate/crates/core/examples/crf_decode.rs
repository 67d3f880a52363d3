//! Viterbi decoding and the partition function of a linear-chain CRF with
//! IOBES transition constraints.

use bioext::crf::{constrained_transitions, log_partition, nll, viterbi};
use bioext::linalg::Matrix;
use bioext::tagger::{label_inventory, MODEL_SCHEME};

fn main() -> bioext::Result<()> {
    let labels = label_inventory(&["Habitat"]);
    // rows: tokens, columns: O B I E S
    let emissions = Matrix::from_rows(&[
        vec![2.0, 0.1, 0.0, 0.0, 0.3],
        vec![0.0, 1.5, 0.2, 0.1, 0.9],
        vec![0.1, 0.0, 0.3, 1.2, 0.2],
    ]);
    let transitions = constrained_transitions(&labels, MODEL_SCHEME);

    let (path, score) = viterbi(&emissions, &transitions)?;
    let tags: Vec<&str> = path.iter().map(|&i| labels[i].as_str()).collect();
    println!("best path {tags:?} score {score:.3}");
    println!("log Z = {:.4}", log_partition(&emissions, &transitions)?);

    let out = nll(&emissions, &transitions, &path)?;
    println!("NLL of the best path {:.4}", out.loss);
    Ok(())
}
