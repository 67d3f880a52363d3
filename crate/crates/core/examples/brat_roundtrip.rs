//! Parse standoff annotations, inspect them and write them back.

use bioext::corpus::{parse_brat, write_brat};

const TEXT: &str = "Vibrio salmonicida causes cold-water vibriosis in Atlantic salmon farms.";
const ANN: &str = "\
T1\tMicroorganism 0 18\tVibrio salmonicida
T2\tHabitat 50 71\tAtlantic salmon farms
T3\tHabitat 50 65\tAtlantic salmon
N1\tReference T1 NCBI_Taxonomy:80854
R1\tLives_In Microorganism:T1 Location:T2
";

fn main() -> bioext::Result<()> {
    let doc = parse_brat("example", TEXT, ANN)?;
    for s in &doc.gold_spans {
        let surface: String = TEXT.chars().skip(s.char_start).take(s.char_end - s.char_start).collect();
        println!("{} {} [{}, {}) {surface:?} norm={:?}", s.ann_id, s.entity_type, s.char_start, s.char_end, s.norm_id);
    }
    for r in &doc.gold_relations {
        println!("{} {} {} -> {}", r.id, r.rel_type, r.arg1(), r.arg2());
    }
    let written = write_brat(&doc);
    print!("{written}");
    assert_eq!(parse_brat("example", TEXT, &written)?.gold_spans, doc.gold_spans);
    Ok(())
}
