//! Readability of instruction texts: Flesch-Kincaid grade level and the
//! Coleman-Liau index.
//!
//! Counting rules:
//! - A word is a maximal run of alphanumeric characters; an apostrophe or
//!   hyphen is kept when it sits between two alphanumerics.
//! - Sentences end at runs of `.`, `!` or `?`. A fragment counts as a
//!   sentence only if it holds at least one word, and a trailing fragment
//!   without a terminator still counts.
//! - Letters are the alphabetic characters inside words; digits are not
//!   letters.
//! - Syllables come from ASCII vowel groups (`aeiouy`), minus one for a
//!   silent final `e`, never below one per word. Non-ASCII letters count
//!   as consonants, so non-English text skews low.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    pub letters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityScore {
    pub task: String,
    pub fk_grade: f64,
    pub cl_index: f64,
    pub n_texts: usize,
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-')
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

enum Token<'a> {
    Word(&'a str),
    Stop,
}

fn tokens(text: &str) -> Vec<Token<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_alphanumeric() {
            let mut j = i + 1;
            while j < chars.len() {
                let cj = chars[j].1;
                if cj.is_alphanumeric() {
                    j += 1;
                } else if is_joiner(cj) && chars.get(j + 1).is_some_and(|n| n.1.is_alphanumeric()) {
                    j += 2;
                } else {
                    break;
                }
            }
            let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
            out.push(Token::Word(&text[start..end]));
            i = j;
        } else {
            if is_terminator(c) && !matches!(out.last(), Some(Token::Stop)) {
                out.push(Token::Stop);
            }
            i += 1;
        }
    }
    out
}

/// Sentence, word, syllable and letter counts under the module's rules.
pub fn tokenize_stats(text: &str) -> Result<TextStats> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("empty text".into()));
    }
    let mut stats = TextStats {
        sentences: 0,
        words: 0,
        syllables: 0,
        letters: 0,
    };
    let mut open_sentence = false;
    for tok in tokens(text) {
        match tok {
            Token::Word(w) => {
                stats.words += 1;
                stats.letters += w.chars().filter(|c| c.is_alphabetic()).count();
                stats.syllables += count_syllables(w).unwrap_or(1);
                open_sentence = true;
            }
            Token::Stop => {
                if open_sentence {
                    stats.sentences += 1;
                    open_sentence = false;
                }
            }
        }
    }
    if open_sentence {
        stats.sentences += 1;
    }
    if stats.words == 0 {
        return Err(Error::InvalidInput(format!("no words in {text:?}")));
    }
    Ok(stats)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group syllable estimate, at least 1.
pub fn count_syllables(word: &str) -> Result<usize> {
    if !word.chars().any(char::is_alphabetic) {
        return Err(Error::InvalidInput(format!("{word:?} has no letters")));
    }
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();

    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }

    let n = letters.len();
    if n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) {
        let consonant_le = n >= 3
            && letters[n - 2] == 'l'
            && letters[n - 3].is_ascii_alphabetic()
            && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    Ok(groups.max(1))
}

impl TextStats {
    /// `0.39 (words/sentences) + 11.8 (syllables/words) - 15.59`
    pub fn flesch_kincaid(&self) -> f64 {
        let w = self.words as f64;
        let s = self.sentences as f64;
        let syl = self.syllables as f64;
        0.39 * (w / s) + 11.8 * (syl / w) - 15.59
    }

    /// `0.0588 L - 0.296 S - 15.8` with L letters and S sentences per 100 words.
    pub fn coleman_liau(&self) -> f64 {
        let w = self.words as f64;
        let l = self.letters as f64 / w * 100.0;
        let s = self.sentences as f64 / w * 100.0;
        0.0588 * l - 0.296 * s - 15.8
    }
}

pub fn flesch_kincaid(text: &str) -> Result<f64> {
    Ok(tokenize_stats(text)?.flesch_kincaid())
}

pub fn coleman_liau(text: &str) -> Result<f64> {
    Ok(tokenize_stats(text)?.coleman_liau())
}

/// Mean Flesch-Kincaid grade and mean Coleman-Liau index over a task's
/// inputs, each text scored on its own first.
pub fn task_readability<S: AsRef<str>>(texts: &[S]) -> Result<(f64, f64)> {
    if texts.is_empty() {
        return Err(Error::InvalidInput("no texts to score".into()));
    }
    let mut fk = 0.0;
    let mut cl = 0.0;
    for t in texts {
        let stats = tokenize_stats(t.as_ref())?;
        fk += stats.flesch_kincaid();
        cl += stats.coleman_liau();
    }
    let n = texts.len() as f64;
    Ok((fk / n, cl / n))
}

impl ReadabilityScore {
    pub fn for_task<S: AsRef<str>>(task: impl Into<String>, texts: &[S]) -> Result<Self> {
        let (fk_grade, cl_index) = task_readability(texts)?;
        Ok(Self {
            task: task.into(),
            fk_grade,
            cl_index,
            n_texts: texts.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat_sat() {
        let s = tokenize_stats("The cat sat.").unwrap();
        assert_eq!((s.sentences, s.words, s.letters), (1, 3, 9));
        assert_eq!(s.syllables, 3);
    }

    #[test]
    fn two_short_sentences() {
        let s = tokenize_stats("Hi. Bye.").unwrap();
        assert_eq!((s.sentences, s.words), (2, 2));
    }

    #[test]
    fn no_words_is_invalid() {
        assert!(matches!(tokenize_stats("???"), Err(Error::InvalidInput(_))));
        assert!(matches!(tokenize_stats("  \n\t"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn trailing_fragment_and_terminator_runs() {
        let s = tokenize_stats("Wait... what?! Really").unwrap();
        assert_eq!((s.sentences, s.words), (3, 3));
    }

    #[test]
    fn joiners_stay_inside_words() {
        let s = tokenize_stats("It's a well-known fact - don't 'quote' me.").unwrap();
        // It's / a / well-known / fact / don't / quote / me
        assert_eq!(s.words, 7);
        assert_eq!(s.letters, 3 + 1 + 9 + 4 + 4 + 5 + 2);
    }

    #[test]
    fn digits_are_words_but_not_letters() {
        let s = tokenize_stats("Add 42 apples.").unwrap();
        assert_eq!((s.words, s.letters, s.syllables), (3, 9, 1 + 1 + 2));
    }

    #[test]
    fn syllable_heuristic() {
        assert_eq!(count_syllables("cat").unwrap(), 1);
        assert_eq!(count_syllables("table").unwrap(), 2);
        assert_eq!(count_syllables("a").unwrap(), 1);
        assert_eq!(count_syllables("the").unwrap(), 1);
        assert_eq!(count_syllables("make").unwrap(), 1);
        assert_eq!(count_syllables("agree").unwrap(), 2);
        assert_eq!(count_syllables("whale").unwrap(), 1);
        assert_eq!(count_syllables("Rhythm").unwrap(), 1);
        assert_eq!(count_syllables("beautiful").unwrap(), 3);
        assert!(matches!(count_syllables("123"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn flesch_kincaid_single_monosyllable() {
        let fk = flesch_kincaid("Go.").unwrap();
        assert!((fk - (-3.4)).abs() < 1e-12);
    }

    #[test]
    fn flesch_kincaid_ten_words_fifteen_syllables() {
        // 10 words per sentence, 15 syllables: 5 x "table" (2) + 5 x "cat" (1)
        let text = "Table cat table cat table cat table cat table cat.";
        let s = tokenize_stats(text).unwrap();
        assert_eq!((s.words, s.sentences, s.syllables), (10, 1, 15));
        assert!((s.flesch_kincaid() - 6.01).abs() < 1e-12);
    }

    #[test]
    fn coleman_liau_l500_s5() {
        // 20 five-letter words, one sentence: L = 500, S = 5
        let text = format!("{}.", vec!["house"; 20].join(" "));
        let s = tokenize_stats(&text).unwrap();
        assert_eq!((s.words, s.letters, s.sentences), (20, 100, 1));
        assert!((s.coleman_liau() - 12.12).abs() < 1e-12);
    }

    #[test]
    fn longer_words_raise_coleman_liau() {
        let short = coleman_liau("The cat sat on a mat.").unwrap();
        let long = coleman_liau("The tiger rested on a carpet.").unwrap();
        assert!(long > short);
    }

    #[test]
    fn duplication_invariance() {
        let text = "Translate the following sentence into German. Keep the tone formal!";
        let doubled = format!("{text} {text}");
        assert_eq!(flesch_kincaid(text).unwrap(), flesch_kincaid(&doubled).unwrap());
        assert_eq!(coleman_liau(text).unwrap(), coleman_liau(&doubled).unwrap());
    }

    #[test]
    fn repeated_whitespace_does_not_change_counts() {
        let a = tokenize_stats("Summarize this   article\n\n in  one line.").unwrap();
        let b = tokenize_stats("Summarize this article in one line.").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn task_means() {
        let single = task_readability(&["The cat sat."]).unwrap();
        assert_eq!(single.0, flesch_kincaid("The cat sat.").unwrap());
        assert_eq!(single.1, coleman_liau("The cat sat.").unwrap());
        assert!(task_readability::<&str>(&[]).is_err());
    }

    #[test]
    fn task_mean_matches_summation() {
        let texts: Vec<String> = (0..100)
            .map(|i| format!("{} cat{}.", vec!["table"; i % 7 + 1].join(" "), "s".repeat(i % 3)))
            .collect();
        let (fk, cl) = task_readability(&texts).unwrap();
        let mut fk_sum = 0.0;
        let mut cl_sum = 0.0;
        for t in &texts {
            let s = tokenize_stats(t).unwrap();
            fk_sum += 0.39 * (s.words as f64 / s.sentences as f64)
                + 11.8 * (s.syllables as f64 / s.words as f64)
                - 15.59;
            cl_sum += 0.0588 * (s.letters as f64 / s.words as f64 * 100.0)
                - 0.296 * (s.sentences as f64 / s.words as f64 * 100.0)
                - 15.8;
        }
        assert!((fk - fk_sum / 100.0).abs() < 1e-12);
        assert!((cl - cl_sum / 100.0).abs() < 1e-12);
    }
}
