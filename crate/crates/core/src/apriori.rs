//! Frequent token-pair mining over above-median prompt templates.
//!
//! Templates whose accuracy is strictly above the median become
//! transactions of their namespaced provenance tokens. Level-wise Apriori
//! finds the frequent 1-itemsets, joins them into candidate pairs and keeps
//! the pairs meeting the support threshold. Surviving clip/context pairs are
//! expanded back into prompt templates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::EvalRecord;
use crate::prompt::{pair_templates, PromptSet, Strategy};

pub const DEFAULT_MIN_SUPPORT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    items: BTreeSet<String>,
}

impl Transaction {
    pub fn new<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let items: BTreeSet<String> = items.into_iter().map(Into::into).collect();
        if items.is_empty() {
            return Err(Error::Empty("transaction items"));
        }
        Ok(Transaction { items })
    }

    pub fn items(&self) -> &BTreeSet<String> {
        &self.items
    }

    pub fn contains(&self, item: &str) -> bool {
        self.items.contains(item)
    }
}

/// An unordered pair (stored sorted) with its support fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequentPair {
    pub items: (String, String),
    pub support: f64,
}

impl FrequentPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, support: f64) -> Self {
        let (a, b) = (a.into(), b.into());
        let items = if a <= b { (a, b) } else { (b, a) };
        FrequentPair { items, support }
    }

    /// The (clip, context) tokens if this pair is one of each, in that order.
    pub fn clip_context(&self) -> Option<(&str, &str)> {
        let (a, b) = (&self.items.0, &self.items.1);
        fn pick<'a>(x: &'a str, y: &'a str) -> Option<(&'a str, &'a str)> {
            Some((x.strip_prefix("clip:")?, y.strip_prefix("ctx:")?))
        }
        pick(a, b).or_else(|| pick(b, a))
    }
}

/// Mean of the two middle order statistics for even length, middle element for odd.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values for median"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// One transaction per record whose accuracy is strictly above the median.
/// Records without provenance tokens contribute no transaction.
pub fn build_transactions(records: &[EvalRecord]) -> Result<Vec<Transaction>> {
    let accs: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let med = median(&accs)?;
    let out: Vec<Transaction> = records
        .iter()
        .filter(|r| r.accuracy > med)
        .filter_map(|r| Transaction::new(r.provenance.iter().cloned()).ok())
        .collect();
    if out.is_empty() {
        log::warn!("no template scored strictly above the median accuracy {med:.6}; no transactions");
    }
    Ok(out)
}

pub fn apriori_frequent_pairs(
    transactions: &[Transaction],
    min_support: f64,
) -> Result<Vec<FrequentPair>> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_support must lie in (0, 1], got {min_support}"
        )));
    }
    if transactions.is_empty() {
        return Err(Error::Empty("transactions"));
    }
    let n = transactions.len() as f64;
    let frequent = |count: usize| count as f64 / n >= min_support;

    let mut singles: BTreeMap<&str, usize> = BTreeMap::new();
    for t in transactions {
        for item in &t.items {
            *singles.entry(item.as_str()).or_default() += 1;
        }
    }
    let level1: BTreeSet<&str> = singles
        .into_iter()
        .filter(|&(_, c)| frequent(c))
        .map(|(item, _)| item)
        .collect();

    // Candidate pairs are joins of frequent singletons; count them in one pass.
    let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for t in transactions {
        let kept: Vec<&str> = t
            .items
            .iter()
            .map(String::as_str)
            .filter(|i| level1.contains(i))
            .collect();
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                *pair_counts.entry((a, b)).or_default() += 1;
            }
        }
    }

    let mut pairs: Vec<FrequentPair> = pair_counts
        .into_iter()
        .filter(|&(_, c)| frequent(c))
        .map(|((a, b), c)| FrequentPair::new(a, b, c as f64 / n))
        .collect();
    sort_pairs(&mut pairs);
    Ok(pairs)
}

/// Support descending, then lexical on the item pair.
pub fn sort_pairs(pairs: &mut [FrequentPair]) {
    pairs.sort_by(|x, y| {
        y.support
            .partial_cmp(&x.support)
            .unwrap_or(Ordering::Equal)
            .then_with(|| x.items.cmp(&y.items))
    });
}

/// Expand clip/context pairs into the three pair prompt shapes. Pairs that
/// are not one clip token and one context token are skipped.
pub fn regenerate_from_pairs(pairs: &[FrequentPair]) -> Result<PromptSet> {
    let mut usable = Vec::new();
    for p in pairs {
        match p.clip_context() {
            Some((clip, ctx)) => usable.push((clip.to_string(), ctx.to_string())),
            None => log::debug!("skipping pair {{{}, {}}}: not a clip/context pair", p.items.0, p.items.1),
        }
    }
    if usable.len() < pairs.len() {
        log::warn!(
            "{} of {} frequent pairs are not clip/context pairs and produce no templates",
            pairs.len() - usable.len(),
            pairs.len()
        );
    }
    if usable.is_empty() {
        return Err(Error::Empty("clip/context pairs to regenerate templates from"));
    }
    pair_templates(&usable, Strategy::Apriori)
}

pub fn format_pairs_csv(pairs: &[FrequentPair]) -> String {
    let mut out = String::from("item_a,item_b,support\n");
    for p in pairs {
        out.push_str(&format!("{},{},{:.6}\n", p.items.0, p.items.1, p.support));
    }
    out
}

pub fn write_pairs(pairs: &[FrequentPair], path: &Path) -> Result<()> {
    fs::write(path, format_pairs_csv(pairs)).map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<FrequentPair>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::parse(path, line, "expected item_a,item_b,support"));
        }
        let support: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad support {:?}", &rec[2])))?;
        out.push(FrequentPair::new(rec[0].trim(), rec[1].trim(), support));
    }
    Ok(out)
}
