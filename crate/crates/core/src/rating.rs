//! Analysis of yes/no rating responses: agreement with a reference
//! annotator per region category, and intra-rater consistency on the
//! duplicated items.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::{Category, RatingItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl std::str::FromStr for Answer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Answer> {
        match s {
            "yes" => Ok(Answer::Yes),
            "no" => Ok(Answer::No),
            other => Err(Error::param(
                "answer",
                format!("`{other}` is not one of yes, no"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingResponse {
    pub rater_id: String,
    pub item_id: String,
    pub answer: Answer,
    /// Server receive time, seconds since the Unix epoch.
    pub timestamp: f64,
}

/// Parses a JSONL response log. Blank lines are skipped; a final line
/// without a terminating newline is an unfinished append and is ignored.
pub fn parse_jsonl(text: &str) -> Result<Vec<RatingResponse>> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<RatingResponse>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

/// Keeps the first response for each (rater, item); returns the kept
/// responses and the rejected later submissions.
pub fn first_response_wins(
    responses: &[RatingResponse],
) -> (Vec<RatingResponse>, Vec<RatingResponse>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for r in responses {
        if seen.insert((r.rater_id.as_str(), r.item_id.as_str())) {
            kept.push(r.clone());
        } else {
            rejected.push(r.clone());
        }
    }
    (kept, rejected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reference {
    A1,
    A2,
}

impl Reference {
    pub fn as_str(self) -> &'static str {
        match self {
            Reference::A1 => "A1",
            Reference::A2 => "A2",
        }
    }
}

impl std::str::FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Reference> {
        match s {
            "A1" | "a1" => Ok(Reference::A1),
            "A2" | "a2" => Ok(Reference::A2),
            other => Err(Error::param(
                "reference",
                format!("`{other}` is not A1 or A2"),
            )),
        }
    }
}

/// The answer the reference annotator's segmentation implies for a region.
pub fn implied_answer(category: Category, reference: Reference) -> Answer {
    let yes = match category {
        Category::Both => true,
        Category::None => false,
        Category::A1Only => reference == Reference::A1,
        Category::A2Only => reference == Reference::A2,
    };
    if yes {
        Answer::Yes
    } else {
        Answer::No
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub agree: u32,
    pub total: u32,
}

impl Tally {
    /// Whole percent, rounding halves up, computed in integers.
    pub fn percent(&self) -> u32 {
        if self.total == 0 {
            0
        } else {
            (200 * self.agree + self.total) / (2 * self.total)
        }
    }

    fn add(&mut self, other: Tally) {
        self.agree += other.agree;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    /// Base items of this category in the rating set.
    pub n_items: usize,
    /// One tally per entry of [`AgreementTable::raters`].
    pub per_rater: Vec<Tally>,
    /// Agreements and answers pooled over raters.
    pub pooled: Tally,
    pub average_pct: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub reference: Reference,
    pub raters: Vec<String>,
    /// Rows in report order: BOTH, A1_ONLY, A2_ONLY, NONE.
    pub rows: Vec<CategoryRow>,
    /// The reference annotator's own ratings, kept out of the main table.
    pub self_agreement: Option<Vec<(Category, Tally)>>,
}

pub const TABLE_ORDER: [Category; 4] = [
    Category::Both,
    Category::A1Only,
    Category::A2Only,
    Category::None,
];

/// Orders ids like `R2` before `R10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let i = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        (&s[..i], s[i..].parse().ok())
    }
    let (pa, na) = split(a);
    let (pb, nb) = split(b);
    pa.cmp(pb).then(na.cmp(&nb)).then(a.cmp(b))
}

/// Per-category agreement of each rater with the answer implied by the
/// reference annotator. Only base items count; duplicated probes are left
/// to [`intra_rater_consistency`]. Category averages pool counts over raters.
pub fn agreement_table(
    responses: &[RatingResponse],
    items: &[RatingItem],
    reference: Reference,
) -> Result<AgreementTable> {
    let by_id: HashMap<&str, &RatingItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let (kept, _) = first_response_wins(responses);
    let mut tallies: BTreeMap<(String, Category), Tally> = BTreeMap::new();
    let mut raters: HashSet<String> = HashSet::new();
    for r in &kept {
        let item = by_id
            .get(r.item_id.as_str())
            .ok_or_else(|| Error::UnknownItem(r.item_id.clone()))?;
        if item.duplicate_of.is_some() {
            continue;
        }
        raters.insert(r.rater_id.clone());
        let t = tallies
            .entry((r.rater_id.clone(), item.category))
            .or_default();
        t.total += 1;
        if r.answer == implied_answer(item.category, reference) {
            t.agree += 1;
        }
    }

    let self_id = reference.as_str();
    let self_agreement = raters.remove(self_id).then(|| {
        TABLE_ORDER
            .iter()
            .map(|&c| {
                (
                    c,
                    tallies
                        .get(&(self_id.to_string(), c))
                        .copied()
                        .unwrap_or_default(),
                )
            })
            .collect()
    });
    let mut raters: Vec<String> = raters.into_iter().collect();
    raters.sort_by(|a, b| natural_cmp(a, b));

    let rows = TABLE_ORDER
        .iter()
        .map(|&category| {
            let per_rater: Vec<Tally> = raters
                .iter()
                .map(|r| {
                    tallies
                        .get(&(r.clone(), category))
                        .copied()
                        .unwrap_or_default()
                })
                .collect();
            let mut pooled = Tally::default();
            per_rater.iter().for_each(|t| pooled.add(*t));
            CategoryRow {
                category,
                n_items: items
                    .iter()
                    .filter(|i| i.duplicate_of.is_none() && i.category == category)
                    .count(),
                per_rater,
                pooled,
                average_pct: pooled.percent(),
            }
        })
        .collect();
    Ok(AgreementTable {
        reference,
        raters,
        rows,
        self_agreement,
    })
}

impl AgreementTable {
    pub fn row(&self, category: Category) -> Option<&CategoryRow> {
        self.rows.iter().find(|r| r.category == category)
    }

    /// CSV shaped like a rater-by-category table: `category,<raters...>,average_pct`
    /// with `agree/total` cells.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut header = vec!["category".to_string()];
        header.extend(self.raters.iter().cloned());
        header.push("average_pct".into());
        writeln!(out, "{}", header.join(","))?;
        for row in &self.rows {
            let mut cells = vec![row.category.as_str().to_string()];
            cells.extend(
                row.per_rater
                    .iter()
                    .map(|t| format!("{}/{}", t.agree, t.total)),
            );
            cells.push(row.average_pct.to_string());
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

pub fn export_agreement_csv(table: &AgreementTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, table.to_csv_string()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub rater_id: String,
    /// Duplicate pairs where both items were answered identically.
    pub matching: usize,
    /// Duplicate pairs where both items were answered.
    pub answered_pairs: usize,
    /// Duplicate pairs skipped because one side is unanswered.
    pub excluded: usize,
}

impl Consistency {
    pub fn ratio(&self) -> Option<f64> {
        (self.answered_pairs > 0).then(|| self.matching as f64 / self.answered_pairs as f64)
    }
}

/// Fraction of duplicate pairs each rater answered the same way twice.
pub fn intra_rater_consistency(
    responses: &[RatingResponse],
    items: &[RatingItem],
) -> Vec<Consistency> {
    let (kept, _) = first_response_wins(responses);
    let answers: HashMap<(&str, &str), Answer> = kept
        .iter()
        .map(|r| ((r.rater_id.as_str(), r.item_id.as_str()), r.answer))
        .collect();
    let pairs: Vec<(&str, &str)> = items
        .iter()
        .filter_map(|i| {
            i.duplicate_of
                .as_deref()
                .map(|base| (base, i.item_id.as_str()))
        })
        .collect();
    let mut raters: Vec<&str> = kept.iter().map(|r| r.rater_id.as_str()).collect();
    raters.sort_by(|a, b| natural_cmp(a, b));
    raters.dedup();
    raters
        .into_iter()
        .map(|rater| {
            let mut c = Consistency {
                rater_id: rater.to_string(),
                matching: 0,
                answered_pairs: 0,
                excluded: 0,
            };
            for &(base, dup) in &pairs {
                match (answers.get(&(rater, base)), answers.get(&(rater, dup))) {
                    (Some(x), Some(y)) => {
                        c.answered_pairs += 1;
                        if x == y {
                            c.matching += 1;
                        }
                    }
                    _ => c.excluded += 1,
                }
            }
            c
        })
        .collect()
}

pub fn write_consistency_csv(rows: &[Consistency], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "rater_id,matching,answered_pairs,excluded,ratio")?;
    for c in rows {
        let ratio = c.ratio().map(|r| r.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{ratio}",
            c.rater_id, c.matching, c.answered_pairs, c.excluded
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{Circle, RATING_QUESTION};

    fn item(id: &str, cat: Category, dup: Option<&str>) -> RatingItem {
        RatingItem {
            item_id: id.into(),
            patch_id: "p".into(),
            image_ref: "p".into(),
            circle: Circle {
                cx: 1.0,
                cy: 1.0,
                r: 1.0,
            },
            question: RATING_QUESTION.into(),
            category: cat,
            duplicate_of: dup.map(str::to_string),
            rotation_deg: if dup.is_some() { 90 } else { 0 },
        }
    }

    fn resp(rater: &str, item: &str, answer: Answer) -> RatingResponse {
        RatingResponse {
            rater_id: rater.into(),
            item_id: item.into(),
            answer,
            timestamp: 0.0,
        }
    }

    #[test]
    fn implied_answers() {
        assert_eq!(implied_answer(Category::Both, Reference::A2), Answer::Yes);
        assert_eq!(implied_answer(Category::None, Reference::A1), Answer::No);
        assert_eq!(implied_answer(Category::A1Only, Reference::A1), Answer::Yes);
        assert_eq!(implied_answer(Category::A1Only, Reference::A2), Answer::No);
        assert_eq!(implied_answer(Category::A2Only, Reference::A1), Answer::No);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(
            Tally {
                agree: 271,
                total: 300
            }
            .percent(),
            90
        );
        assert_eq!(
            Tally {
                agree: 47,
                total: 300
            }
            .percent(),
            16
        );
        assert_eq!(Tally { agree: 1, total: 8 }.percent(), 13);
        assert_eq!(Tally::default().percent(), 0);
    }

    #[test]
    fn natural_ordering() {
        let mut ids = vec!["R10", "R2", "R1", "A1"];
        ids.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(ids, vec!["A1", "R1", "R2", "R10"]);
    }

    #[test]
    fn duplicates_and_resubmissions_do_not_count() {
        let items = vec![
            item("i0", Category::Both, None),
            item("i1", Category::Both, Some("i0")),
        ];
        let responses = vec![
            resp("R1", "i0", Answer::Yes),
            resp("R1", "i0", Answer::No),
            resp("R1", "i1", Answer::No),
        ];
        let t = agreement_table(&responses, &items, Reference::A1).unwrap();
        assert_eq!(
            t.row(Category::Both).unwrap().per_rater,
            vec![Tally { agree: 1, total: 1 }]
        );
        let (_, rejected) = first_response_wins(&responses);
        assert_eq!(rejected.len(), 1);
    }

    #[test]
    fn unknown_item_is_an_error() {
        let items = vec![item("i0", Category::Both, None)];
        let err =
            agreement_table(&[resp("R1", "zz", Answer::Yes)], &items, Reference::A1).unwrap_err();
        assert!(matches!(err, Error::UnknownItem(ref s) if s == "zz"));
    }

    #[test]
    fn reference_rater_is_reported_separately() {
        let items = vec![item("i0", Category::A1Only, None)];
        let responses = vec![resp("A1", "i0", Answer::Yes), resp("R1", "i0", Answer::No)];
        let t = agreement_table(&responses, &items, Reference::A1).unwrap();
        assert_eq!(t.raters, vec!["R1"]);
        let own = t.self_agreement.unwrap();
        assert_eq!(own[1], (Category::A1Only, Tally { agree: 1, total: 1 }));
    }

    #[test]
    fn empty_responses_give_zero_table() {
        let items = vec![item("i0", Category::None, None)];
        let t = agreement_table(&[], &items, Reference::A1).unwrap();
        assert_eq!(
            t.to_csv_string(),
            "category,average_pct\nBOTH,0\nA1_ONLY,0\nA2_ONLY,0\nNONE,0\n"
        );
        assert_eq!(t.row(Category::None).unwrap().n_items, 1);
    }

    #[test]
    fn consistency_counts() {
        let mut items: Vec<RatingItem> = (0..7)
            .map(|i| item(&format!("b{i}"), Category::Both, None))
            .collect();
        items
            .extend((0..7).map(|i| item(&format!("d{i}"), Category::Both, Some(&format!("b{i}")))));
        let mut responses = Vec::new();
        for i in 0..7 {
            responses.push(resp("same", &format!("b{i}"), Answer::Yes));
            responses.push(resp("same", &format!("d{i}"), Answer::Yes));
            responses.push(resp("flip", &format!("b{i}"), Answer::Yes));
            responses.push(resp(
                "flip",
                &format!("d{i}"),
                if i < 2 { Answer::No } else { Answer::Yes },
            ));
        }
        for i in 0..3 {
            responses.push(resp("partial", &format!("b{i}"), Answer::No));
            responses.push(resp("partial", &format!("d{i}"), Answer::No));
        }
        let c = intra_rater_consistency(&responses, &items);
        let get = |id: &str| c.iter().find(|c| c.rater_id == id).unwrap();
        assert_eq!(get("same").ratio(), Some(1.0));
        assert_eq!((get("flip").matching, get("flip").answered_pairs), (5, 7));
        assert!((get("flip").ratio().unwrap() - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(get("partial").ratio(), Some(1.0));
        assert_eq!(get("partial").excluded, 4);
    }

    #[test]
    fn jsonl_skips_unfinished_tail() {
        let text = "{\"rater_id\":\"R1\",\"item_id\":\"i0\",\"answer\":\"yes\",\"timestamp\":1.5}\n\n{\"rater_id\":\"R1\",\"item";
        let r = parse_jsonl(text).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].answer, Answer::Yes);
        assert!(parse_jsonl("{bad}\n").is_err());
        assert!("maybe".parse::<Answer>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn reciprocity_between_references(answers in proptest::collection::vec(proptest::bool::ANY, 1..60)) {
            let items: Vec<RatingItem> = (0..answers.len()).map(|i| item(&format!("i{i}"), Category::A1Only, None)).collect();
            let responses: Vec<RatingResponse> = answers
                .iter()
                .enumerate()
                .map(|(i, &y)| resp(&format!("R{}", i % 4), &format!("i{i}"), if y { Answer::Yes } else { Answer::No }))
                .collect();
            let t1 = agreement_table(&responses, &items, Reference::A1).unwrap();
            let t2 = agreement_table(&responses, &items, Reference::A2).unwrap();
            let r1 = t1.row(Category::A1Only).unwrap();
            let r2 = t2.row(Category::A1Only).unwrap();
            proptest::prop_assert_eq!(r2.pooled.agree, r1.pooled.total - r1.pooled.agree);
            for (a, b) in r1.per_rater.iter().zip(&r2.per_rater) {
                proptest::prop_assert_eq!(b.agree, a.total - a.agree);
            }
        }
    }
}
