//! Deterministic synthetic corpora with planted verbatim quotations, for
//! demos, benchmarks and end-to-end tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{sentence_id, IngestRecord};

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "ch", "cl", "dr",
    "fl", "gr", "pl", "pr", "sh", "st", "th", "tr", "qu", "sp",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "oo", "ie", "y"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "m", "th", "ng", "ck", "x"];

/// One non-focus book of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBook {
    pub doc_id: String,
    pub pub_year: i32,
    pub disciplines: Vec<String>,
    pub is_correspondent: bool,
    pub distractors: usize,
    /// Focus sentence ordinals copied verbatim into this book.
    pub planted: Vec<usize>,
}

impl SynthBook {
    pub fn new(doc_id: impl Into<String>, pub_year: i32, disciplines: &[&str]) -> Self {
        Self {
            doc_id: doc_id.into(),
            pub_year,
            disciplines: disciplines.iter().map(|s| s.to_string()).collect(),
            is_correspondent: false,
            distractors: 6,
            planted: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub focus_doc_id: String,
    pub focus_pub_year: i32,
    pub focus_sentences: usize,
    pub books: Vec<SynthBook>,
}

/// A planted quotation: focus sentence ordinal and the sentence id it was
/// copied to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plant {
    pub focus_sentence_id: String,
    pub corpus_sentence_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub focus_doc_id: String,
    /// Focus book first, then the books in spec order.
    pub records: Vec<IngestRecord>,
    pub plants: Vec<Plant>,
    pub distractor_sentences: usize,
}

impl SynthCorpus {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

struct Words {
    rng: ChaCha8Rng,
    vocabulary: Vec<String>,
}

impl Words {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocabulary: Vec<String> = (0..4000)
            .map(|_| {
                let syllables = rng.gen_range(2..=3);
                (0..syllables)
                    .map(|_| {
                        format!(
                            "{}{}{}",
                            ONSETS.choose(&mut rng).unwrap(),
                            NUCLEI.choose(&mut rng).unwrap(),
                            CODAS.choose(&mut rng).unwrap()
                        )
                    })
                    .collect::<String>()
            })
            .collect();
        vocabulary.sort();
        vocabulary.dedup();
        Self { rng, vocabulary }
    }

    /// 46 to 64 words, capitalized, with occasional commas, ending in a period.
    fn sentence(&mut self) -> String {
        let n = self.rng.gen_range(46..=64);
        let mut out = String::new();
        for i in 0..n {
            let w = self.vocabulary.choose(&mut self.rng).unwrap();
            if i == 0 {
                let mut c = w.chars();
                out.extend(c.next().unwrap().to_uppercase());
                out.push_str(c.as_str());
            } else {
                out.push(' ');
                out.push_str(w);
            }
            if i + 1 < n && i > 2 && self.rng.gen_bool(0.06) {
                out.push(',');
            }
        }
        out.push('.');
        out
    }
}

/// Builds the corpus described by `spec`. Planted sentences are inserted at
/// random positions among each book's distractors.
pub fn generate(spec: &SynthSpec) -> SynthCorpus {
    let mut words = Words::new(spec.seed);
    let focus: Vec<String> = (0..spec.focus_sentences).map(|_| words.sentence()).collect();
    let mut records = vec![IngestRecord {
        doc_id: spec.focus_doc_id.clone(),
        title: format!("Synthetic focus book {}", spec.focus_doc_id),
        author: "Focus Author".into(),
        pub_year: spec.focus_pub_year,
        disciplines: vec!["natural_history".into()],
        is_correspondent: false,
        source: "synthetic".into(),
        text: focus.join(" "),
    }];
    let mut plants = Vec::new();
    let mut distractor_sentences = 0;
    for book in &spec.books {
        let mut sentences: Vec<Option<usize>> = vec![None; book.distractors];
        for &p in &book.planted {
            assert!(p < focus.len(), "planted ordinal {p} out of range");
            let at = words.rng.gen_range(0..=sentences.len());
            sentences.insert(at, Some(p));
        }
        let mut text = Vec::with_capacity(sentences.len());
        for (ordinal, s) in sentences.iter().enumerate() {
            match s {
                Some(p) => {
                    plants.push(Plant {
                        focus_sentence_id: sentence_id(&spec.focus_doc_id, *p),
                        corpus_sentence_id: sentence_id(&book.doc_id, ordinal),
                    });
                    text.push(focus[*p].clone());
                }
                None => {
                    distractor_sentences += 1;
                    text.push(words.sentence());
                }
            }
        }
        records.push(IngestRecord {
            doc_id: book.doc_id.clone(),
            title: format!("Synthetic book {}", book.doc_id),
            author: format!("Author of {}", book.doc_id),
            pub_year: book.pub_year,
            disciplines: book.disciplines.clone(),
            is_correspondent: book.is_correspondent,
            source: "synthetic".into(),
            text: text.join(" "),
        });
    }
    SynthCorpus { focus_doc_id: spec.focus_doc_id.clone(), records, plants, distractor_sentences }
}

/// 200 documents: a focus book published in 1859 and 199 others holding
/// 10,000 distractor sentences and 12 planted verbatim quotations.
pub fn planted_spec(seed: u64) -> SynthSpec {
    const DISCIPLINES: [&str; 8] = [
        "chemistry",
        "general",
        "geography",
        "geology",
        "medical",
        "natural_history",
        "orientalist",
        "political_social",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut books: Vec<SynthBook> = (0..199)
        .map(|i| {
            let year = 1820 + (i as i32 * 7) % 80;
            let mut d = vec![DISCIPLINES[i % DISCIPLINES.len()]];
            if i % 5 == 0 {
                d.push(DISCIPLINES[(i + 3) % DISCIPLINES.len()]);
            }
            if i % 11 == 0 {
                d.clear();
            }
            let mut b = SynthBook::new(format!("book{i:03}"), year, &d);
            b.is_correspondent = i % 13 == 0;
            b.distractors = 50;
            b
        })
        .collect();
    // 199 * 50 = 9,950; the remaining 50 go to the first ten books.
    for b in books.iter_mut().take(10) {
        b.distractors += 5;
    }
    let mut focus_ordinals: Vec<usize> = (0..40).collect();
    focus_ordinals.shuffle(&mut rng);
    // Six quotes in one later geology book (an influenced book), the rest
    // spread over earlier and later books.
    let plan: [(usize, usize); 7] = [(3, 6), (10, 1), (24, 1), (40, 1), (58, 1), (91, 1), (150, 1)];
    let mut next = focus_ordinals.into_iter();
    for (book, count) in plan {
        for _ in 0..count {
            books[book].planted.push(next.next().unwrap());
        }
    }
    books[3].pub_year = 1862;
    books[3].disciplines = vec!["geology".into()];
    SynthSpec { seed, focus_doc_id: "focus".into(), focus_pub_year: 1859, focus_sentences: 40, books }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{segment_sentences, word_count};

    #[test]
    fn planted_fixture_shape() {
        let c = generate(&planted_spec(1));
        assert_eq!(c.records.len(), 200);
        assert_eq!(c.plants.len(), 12);
        assert_eq!(c.distractor_sentences, 10_000);
        assert_eq!(generate(&planted_spec(1)), c);
    }

    #[test]
    fn sentences_segment_as_generated() {
        let mut w = Words::new(3);
        let sentences: Vec<String> = (0..300).map(|_| w.sentence()).collect();
        assert_eq!(segment_sentences(&sentences.join(" ")), sentences);
        assert!(sentences.iter().all(|s| word_count(s) >= 46));
    }

    #[test]
    fn plants_are_verbatim() {
        let c = generate(&planted_spec(9));
        let focus = segment_sentences(&c.records[0].text);
        for p in &c.plants {
            let (doc, ord) = crate::corpus::parse_sentence_id(&p.corpus_sentence_id).unwrap();
            let (_, f) = crate::corpus::parse_sentence_id(&p.focus_sentence_id).unwrap();
            let rec = c.records.iter().find(|r| r.doc_id == doc).unwrap();
            assert_eq!(segment_sentences(&rec.text)[ord], focus[f]);
        }
    }
}
