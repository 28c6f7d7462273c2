use std::collections::HashMap;

use super::{Entry, Result, Task, TokenClass, TokenizerError, Vocabulary};

/// Printable ASCII followed by the Latin-1 letters.
pub const LATIN_ALPHABET: &str = concat!(
    " !\"#$%&'()*+,-./0123456789:;<=>?@ABCDEFGHIJKLMNOPQRSTUVWXYZ[\\]^_`abcdefghijklmnopqrstuvwxyz{|}~",
    "ÀÁÂÃÄÅÆÇÈÉÊËÌÍÎÏÐÑÒÓÔÕÖØÙÚÛÜÝÞßàáâãäåæçèéêëìíîïðñòóôõöøùúûüýþÿ"
);

/// Special tokens a vocabulary should carry besides pad/end/blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecialSet {
    pub tasks: Vec<Task>,
    pub layout_classes: Vec<String>,
    pub ne_categories: Vec<String>,
}

impl Default for SpecialSet {
    fn default() -> Self {
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            tasks: vec![Task::Htr, Task::Ner("iam".into()), Task::Ner("mpopp".into())],
            layout_classes: names(&[
                "body",
                "sender",
                "recipient",
                "date",
                "subject",
                "opening",
                "ps",
                "section",
                "annotation",
                "number",
                "A",
                "B",
                "C",
            ]),
            ne_categories: names(&["PERSON", "GPE", "ORG", "DATE", "CARDINAL"]),
        }
    }
}

impl SpecialSet {
    fn entries(&self) -> Vec<Entry> {
        let mut classes = vec![TokenClass::Pad, TokenClass::End, TokenClass::Blank, TokenClass::Newline];
        classes.extend(self.tasks.iter().cloned().map(TokenClass::Start));
        for c in &self.layout_classes {
            classes.push(TokenClass::LayoutOpen(c.clone()));
            classes.push(TokenClass::LayoutClose(c.clone()));
        }
        for c in &self.ne_categories {
            classes.push(TokenClass::NeOpen(c.clone()));
            classes.push(TokenClass::NeClose(c.clone()));
        }
        classes.into_iter().map(|class| Entry { surface: class.canonical_surface().expect("special"), class }).collect()
    }
}

/// The `count` most frequent character bigrams and trigrams of `corpus`
/// made only of characters in `alphabet`. Ties break lexicographically.
pub fn frequent_ngrams<'a>(corpus: impl IntoIterator<Item = &'a str>, alphabet: &str, count: usize) -> Vec<String> {
    let allowed: std::collections::HashSet<char> = alphabet.chars().collect();
    let mut freq: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        let chars: Vec<char> = line.chars().collect();
        for n in 2..=3 {
            for w in chars.windows(n) {
                if w.iter().all(|c| allowed.contains(c)) {
                    *freq.entry(w.iter().collect()).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(count).map(|(s, _)| s).collect()
}

/// Single characters of [`LATIN_ALPHABET`] plus the specials.
pub fn char_vocabulary(specials: &SpecialSet) -> Result<Vocabulary> {
    desk_vocabulary(std::iter::empty(), 0, specials)
}

/// Single characters plus the `ngram_count` most frequent n-grams of the corpus.
pub fn desk_vocabulary<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    ngram_count: usize,
    specials: &SpecialSet,
) -> Result<Vocabulary> {
    let mut entries: Vec<Entry> =
        LATIN_ALPHABET.chars().map(|c| Entry { surface: c.to_string(), class: TokenClass::Plain }).collect();
    if ngram_count > 0 {
        let grams = frequent_ngrams(corpus, LATIN_ALPHABET, ngram_count);
        entries.extend(grams.into_iter().map(|surface| Entry { surface, class: TokenClass::Plain }));
    }
    entries.extend(specials.entries());
    Vocabulary::new(entries).map_err(|e| TokenizerError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_size() {
        assert_eq!(LATIN_ALPHABET.chars().count(), 95 + 62);
    }

    #[test]
    fn ngrams_rank_by_frequency() {
        let grams = frequent_ngrams(["abab", "ab"], LATIN_ALPHABET, 3);
        assert_eq!(grams, ["ab", "aba", "ba"]);
    }

    #[test]
    fn desk_vocabulary_covers_latin_text() {
        let v = desk_vocabulary(["the cat sat on the mat"], 20, &SpecialSet::default()).unwrap();
        let ids = v.segment("Élan, the façade!").unwrap();
        assert_eq!(v.detokenize(&ids).unwrap(), "Élan, the façade!");
        assert!(v.segment("the").unwrap().len() < 3);
        assert!(v.start(&Task::Htr).is_some());
        assert!(v.newline().is_some());
    }
}
