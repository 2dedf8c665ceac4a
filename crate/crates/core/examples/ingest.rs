//! Parses a small *SEM CoNLL snippet and a BioScope XML sentence, explodes
//! them into one sample per negation and writes the JSONL corpus.
//!
//! `cargo run --example ingest -- [OUT.jsonl]`

use orthoattn::corpus::{explode, parse_bioscope_xml, parse_sem_conll, write_jsonl, DatasetStats};

const SEM: &str = "\
s1\t0\t0\tHe\the\tPRP\t(S*\t_\tHe\t_
s1\t0\t1\tneither\tneither\tCC\t*\tneither\t_\t_
s1\t0\t2\tate\teat\tVBD\t*\t_\tate\tate
s1\t0\t3\tnor\tnor\tCC\t*\tnor\t_\t_
s1\t0\t4\tslept\tsleep\tVBD\t*\t_\tslept\t_
s1\t0\t5\t.\t.\t.\t*)\t_\t_\t_
";

const BIOSCOPE: &str = r#"<Annotation><sentence id="S1">We <xcope id="X1"><cue type="negation" ref="X1">did not</cue> detect the protein</xcope> in these cells .</sentence></Annotation>"#;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("ingest-example.jsonl").display().to_string());
    let mut sentences = parse_sem_conll(SEM)?;
    let sem_count = sentences.len();
    sentences.extend(parse_bioscope_xml(BIOSCOPE)?);
    let mut samples = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        samples.extend(explode(s, if i < sem_count { "sem" } else { "bioscope" })?);
    }
    for s in &samples {
        let marked: Vec<String> = s
            .words
            .iter()
            .zip(s.cue_mask.iter().zip(&s.scope_labels))
            .map(|(w, (&cue, &scope))| match (cue, scope) {
                (true, _) => format!("<{w}>"),
                (_, true) => format!("[{w}]"),
                _ => w.clone(),
            })
            .collect();
        println!("{:<12} {}", s.id, marked.join(" "));
    }
    let stats = DatasetStats::of(&sentences, &samples);
    println!("{stats:?}");
    write_jsonl(out.as_ref(), &samples)?;
    println!("wrote {out}");
    Ok(())
}
