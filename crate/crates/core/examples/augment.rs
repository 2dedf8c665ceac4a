//! Shows both input preprocessings of a sentence: unchanged words, and a
//! `[CUE]` marker in front of every cue word.

use orthoattn::corpus::{augment_words, strip_markers, synth, Preprocessing};

fn main() {
    for sample in synth::generate(3, 1) {
        println!("sample {}", sample.id);
        for mode in Preprocessing::ALL {
            let aug = augment_words(&sample, mode);
            let words: Vec<String> = aug
                .words
                .iter()
                .zip(&aug.labels)
                .map(|(w, &l)| if l == 1 { format!("{w}/S") } else { w.clone() })
                .collect();
            println!("  {mode:<8} {}  (cues at {:?})", words.join(" "), aug.cue_ids);
            assert_eq!(strip_markers(&aug), sample.words);
        }
    }
}
