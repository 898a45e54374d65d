//! Knowledge-base triples, lexical cleaning and the relation schema.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Direction, TaggedExample};
use crate::error::{Error, Result};

pub const DEFAULT_NEGATIVE: &str = "no_relation";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Reads `head<TAB>relation<TAB>tail` lines; `#` lines and blank lines are
/// skipped.
pub fn load_triples<R: BufRead>(reader: R) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        match fields.as_slice() {
            [head, relation, tail] if !head.is_empty() && !relation.is_empty() && !tail.is_empty() => {
                triples.push(Triple::new(*head, *relation, *tail))
            }
            _ => {
                return Err(Error::Parse {
                    line: index + 1,
                    message: format!("expected `head<TAB>relation<TAB>tail`, got {} field(s)", fields.len()),
                })
            }
        }
    }
    Ok(triples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemovalReason {
    OneLetter,
    CapsAndDots,
    SameEntity,
}

pub fn is_one_letter(entity: &str) -> bool {
    let mut chars = entity.trim().chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_alphabetic())
}

/// True for initials such as `U.S.` or `J.`: at least one dot, and what is
/// left after dropping dots and whitespace is uppercase letters only.
pub fn is_caps_and_dots(entity: &str) -> bool {
    if !entity.contains('.') {
        return false;
    }
    let mut rest = entity
        .chars()
        .filter(|c| *c != '.' && !c.is_whitespace())
        .peekable();
    rest.peek().is_some() && rest.all(|c| c.is_alphabetic() && c.is_uppercase())
}

fn normalized(entity: &str) -> Vec<String> {
    tokenize(entity)
        .map(|tokens| tokens.into_iter().map(|t| t.norm).collect())
        .unwrap_or_default()
}

pub fn removal_reason(triple: &Triple) -> Option<RemovalReason> {
    let entities = [triple.head.as_str(), triple.tail.as_str()];
    if entities.iter().any(|e| is_one_letter(e)) {
        Some(RemovalReason::OneLetter)
    } else if entities.iter().any(|e| is_caps_and_dots(e)) {
        Some(RemovalReason::CapsAndDots)
    } else if normalized(&triple.head) == normalized(&triple.tail) {
        Some(RemovalReason::SameEntity)
    } else {
        None
    }
}

/// Splits triples into those passing the lexical rules and those removed.
pub fn clean_triples(triples: Vec<Triple>) -> (Vec<Triple>, Vec<(Triple, RemovalReason)>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for triple in triples {
        match removal_reason(&triple) {
            Some(reason) => removed.push((triple, reason)),
            None => kept.push(triple),
        }
    }
    (kept, removed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    /// Includes the negative class.
    pub relations: Vec<String>,
    pub directional: bool,
    pub negative: String,
    /// Relations folded into the negative class.
    #[serde(default)]
    pub demoted: BTreeSet<String>,
}

impl RelationSchema {
    pub fn new(relations: Vec<String>, directional: bool, negative: impl Into<String>) -> Result<Self> {
        let negative = negative.into();
        let mut seen = BTreeSet::new();
        let mut ordered = Vec::with_capacity(relations.len() + 1);
        for relation in relations {
            if !seen.insert(relation.clone()) {
                return Err(Error::Schema(format!("duplicate relation `{relation}`")));
            }
            ordered.push(relation);
        }
        if !seen.contains(&negative) {
            ordered.push(negative.clone());
        }
        Ok(RelationSchema {
            relations: ordered,
            directional,
            negative,
            demoted: BTreeSet::new(),
        })
    }

    /// Parses a schema file: one relation per line, optional `!negative <id>`
    /// and `!directional <true|false>` directives, `#` comments.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut relations = Vec::new();
        let mut negative = DEFAULT_NEGATIVE.to_string();
        let mut directional = true;
        for (index, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(directive) = line.strip_prefix('!') {
                let (key, value) = directive.split_once(char::is_whitespace).unwrap_or((directive, ""));
                match (key, value.trim()) {
                    ("negative", id) if !id.is_empty() => negative = id.to_string(),
                    ("directional", "true") => directional = true,
                    ("directional", "false") => directional = false,
                    _ => {
                        return Err(Error::Parse {
                            line: index + 1,
                            message: format!("unknown schema directive `{line}`"),
                        })
                    }
                }
            } else {
                relations.push(line.to_string());
            }
        }
        RelationSchema::new(relations, directional, negative)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("!negative {}\n!directional {}\n", self.negative, self.directional);
        for relation in self.relations.iter().chain(&self.demoted) {
            out.push_str(relation);
            out.push('\n');
        }
        out
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.relations.iter().any(|r| r == relation) || self.demoted.contains(relation)
    }

    pub fn is_negative(&self, relation: &str) -> bool {
        relation == self.negative || self.demoted.contains(relation)
    }

    /// Maps demoted relations onto the negative class.
    pub fn resolve<'a>(&'a self, relation: &'a str) -> &'a str {
        if self.demoted.contains(relation) {
            &self.negative
        } else {
            relation
        }
    }

    pub fn positive_relations(&self) -> impl Iterator<Item = &str> {
        self.relations
            .iter()
            .map(String::as_str)
            .filter(move |r| *r != self.negative)
    }

    /// Relabels triples of demoted relations to the negative class.
    pub fn relabel(&self, triples: &[Triple]) -> Vec<Triple> {
        triples
            .iter()
            .map(|t| Triple::new(t.head.clone(), self.resolve(&t.relation), t.tail.clone()))
            .collect()
    }

    pub fn classes(&self) -> ClassSet {
        ClassSet::from_schema(self)
    }
}

/// Folds `demoted` into the negative class and drops them from the class list.
pub fn designate_negative(schema: &RelationSchema, demoted: &BTreeSet<String>) -> Result<RelationSchema> {
    let mut out = schema.clone();
    for relation in demoted {
        if *relation == schema.negative {
            return Err(Error::Schema("the negative class cannot be demoted".into()));
        }
        if !schema.relations.contains(relation) {
            return Err(Error::Schema(format!("cannot demote unknown relation `{relation}`")));
        }
        out.relations.retain(|r| r != relation);
        out.demoted.insert(relation.clone());
    }
    Ok(out)
}

/// The scored classes. Directional schemas contribute `rel(e1,e2)` and
/// `rel(e2,e1)` per positive relation; the negative class is always last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    pub names: Vec<String>,
    pub negative_relation: String,
    pub directional: bool,
    #[serde(default)]
    pub demoted: BTreeSet<String>,
}

impl ClassSet {
    pub fn from_schema(schema: &RelationSchema) -> Self {
        let mut names = Vec::new();
        for relation in schema.positive_relations() {
            if schema.directional {
                names.push(format!("{relation}{}", Direction::Forward.suffix()));
                names.push(format!("{relation}{}", Direction::Backward.suffix()));
            } else {
                names.push(relation.to_string());
            }
        }
        names.push(schema.negative.clone());
        ClassSet {
            names,
            negative_relation: schema.negative.clone(),
            directional: schema.directional,
            demoted: schema.demoted.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn negative(&self) -> usize {
        self.names.len() - 1
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Relation id behind a class name, without the direction suffix.
    pub fn relation_of(&self, class: usize) -> &str {
        let name = &self.names[class];
        name.strip_suffix(Direction::Forward.suffix())
            .or_else(|| name.strip_suffix(Direction::Backward.suffix()))
            .unwrap_or(name)
    }

    pub fn class_of_label(&self, label: &str, direction: Direction) -> Result<usize> {
        if label == self.negative_relation || self.demoted.contains(label) {
            return Ok(self.negative());
        }
        let name = if self.directional {
            if direction == Direction::None {
                return Err(Error::Schema(format!(
                    "relation `{label}` needs a direction in a directional schema"
                )));
            }
            format!("{label}{}", direction.suffix())
        } else {
            label.to_string()
        };
        self.index_of(&name)
            .ok_or_else(|| Error::Schema(format!("unknown relation `{name}`")))
    }

    /// Schema that reads labels the way this class set was built.
    pub fn to_schema(&self) -> RelationSchema {
        let mut relations: Vec<String> = Vec::new();
        for class in 0..self.negative() {
            let relation = self.relation_of(class);
            if relations.last().map(String::as_str) != Some(relation) {
                relations.push(relation.to_string());
            }
        }
        relations.push(self.negative_relation.clone());
        RelationSchema {
            relations,
            directional: self.directional,
            negative: self.negative_relation.clone(),
            demoted: self.demoted.clone(),
        }
    }

    pub fn class_of(&self, example: &TaggedExample) -> Result<usize> {
        let label = example
            .label
            .as_deref()
            .ok_or_else(|| Error::contract(format!("example `{}` is unlabeled", example.id())))?;
        self.class_of_label(label, example.direction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn load_triples_parses_and_skips_comments() {
        let triples = load_triples("Steve Jobs\torg:founded-by\tApple\n# comment\n\n".as_bytes()).unwrap();
        assert_eq!(triples, vec![Triple::new("Steve Jobs", "org:founded-by", "Apple")]);
        assert!(load_triples("# comment".as_bytes()).unwrap().is_empty());
        let err = load_triples("x\ty\tz\na\tb\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn cleaning_rules() {
        let t = |h: &str| Triple::new(h, "r", "Somebody Else");
        assert_eq!(removal_reason(&t("A")), Some(RemovalReason::OneLetter));
        assert_eq!(removal_reason(&t("U.S.")), Some(RemovalReason::CapsAndDots));
        assert_eq!(removal_reason(&t("J. R.")), Some(RemovalReason::CapsAndDots));
        assert_eq!(removal_reason(&t("Billie Piper")), None);
        assert_eq!(removal_reason(&t("IBM")), None);
        assert_eq!(removal_reason(&t("St. Louis")), None);
        assert_eq!(
            removal_reason(&Triple::new("Apple", "r", "apple")),
            Some(RemovalReason::SameEntity)
        );
    }

    #[test]
    fn schema_file_and_classes() {
        let schema = RelationSchema::parse(
            "!negative other\n# c\norg:founded-by\nper:spouse\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(schema.relations, ["org:founded-by", "per:spouse", "other"]);
        let classes = schema.classes();
        assert_eq!(classes.len(), 5);
        assert_eq!(classes.name(1), "org:founded-by(e2,e1)");
        assert_eq!(classes.negative(), 4);
        assert_eq!(classes.relation_of(1), "org:founded-by");
        assert_eq!(classes.class_of_label("per:spouse", Direction::Forward).unwrap(), 2);
        assert_eq!(classes.class_of_label("other", Direction::None).unwrap(), 4);
        assert!(RelationSchema::parse("!bogus\n".as_bytes()).is_err());
        let again = RelationSchema::parse(schema.to_text().as_bytes()).unwrap();
        assert_eq!(again, schema);
    }

    #[test]
    fn designate_negative_demotes() {
        let schema = RelationSchema::new(
            ["per:religion", "per:children", "org:political/religious-affiliation", "per:title"]
                .map(String::from)
                .to_vec(),
            true,
            "no_relation",
        )
        .unwrap();
        let demoted: BTreeSet<String> = ["per:religion", "per:children", "org:political/religious-affiliation"]
            .map(String::from)
            .into();
        let out = designate_negative(&schema, &demoted).unwrap();
        assert_eq!(out.relations, ["per:title", "no_relation"]);
        let triples = vec![
            Triple::new("x", "per:children", "y"),
            Triple::new("x", "per:title", "z"),
        ];
        let relabeled = out.relabel(&triples);
        assert_eq!(relabeled.len(), triples.len());
        assert_eq!(relabeled[0].relation, "no_relation");
        assert_eq!(relabeled[1].relation, "per:title");
        assert_eq!(out.classes().class_of_label("per:children", Direction::None).unwrap(), 2);

        assert_eq!(designate_negative(&schema, &BTreeSet::new()).unwrap(), schema);
        let neg: BTreeSet<String> = ["no_relation".to_string()].into();
        assert!(designate_negative(&schema, &neg).is_err());
        let unknown: BTreeSet<String> = ["nope".to_string()].into();
        assert!(designate_negative(&schema, &unknown).is_err());
    }

    fn arb_entity() -> impl Strategy<Value = String> {
        prop_oneof![
            "[A-Z]",
            "[A-Z]\\.([A-Z]\\.){0,2}",
            "[A-Za-z]{2,6}( [A-Za-z]{2,6})?",
            "[a-z]",
        ]
    }

    proptest! {
        #[test]
        fn clean_is_idempotent_partition(
            pairs in proptest::collection::vec((arb_entity(), arb_entity()), 0..30)
        ) {
            let triples: Vec<Triple> = pairs.into_iter().map(|(h, t)| Triple::new(h, "r", t)).collect();
            let (kept, removed) = clean_triples(triples.clone());
            prop_assert_eq!(kept.len() + removed.len(), triples.len());
            let (again, none) = clean_triples(kept.clone());
            prop_assert_eq!(&again, &kept);
            prop_assert!(none.is_empty());
            // independent restatement of the two lexical rules
            for t in &kept {
                for e in [&t.head, &t.tail] {
                    let one_letter = e.chars().count() == 1 && e.chars().all(char::is_alphabetic);
                    let stripped: String = e.chars().filter(|c| *c != '.' && *c != ' ').collect();
                    let caps = e.contains('.') && !stripped.is_empty()
                        && stripped.chars().all(|c| c.is_ascii_uppercase());
                    prop_assert!(!one_letter && !caps, "{}", e);
                }
            }
        }
    }

    #[test]
    fn class_set_round_trips_through_schema() {
        for directional in [true, false] {
            let mut schema = RelationSchema::new(vec!["a".into(), "b".into()], directional, "none").unwrap();
            schema.demoted.insert("c".into());
            let classes = schema.classes();
            assert_eq!(classes.to_schema(), schema);
        }
    }
}
