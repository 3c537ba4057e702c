use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Color, Kind, SceneSpec, Shape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    RelationLr,
    RelationAb,
    Count,
    Existence,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::RelationLr,
        Category::RelationAb,
        Category::Count,
        Category::Existence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::RelationLr => "relation_lr",
            Category::RelationAb => "relation_ab",
            Category::Count => "count",
            Category::Existence => "existence",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Left,
    Right,
    Above,
    Below,
}

impl Relation {
    pub fn category(self) -> Category {
        match self {
            Relation::Left | Relation::Right => Category::RelationLr,
            Relation::Above | Relation::Below => Category::RelationAb,
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Relation::Left => "to the left of",
            Relation::Right => "to the right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CountFilter {
    Color(Color),
    Shape(Shape),
}

impl CountFilter {
    fn matches(self, k: Kind) -> bool {
        match self {
            CountFilter::Color(c) => k.color == c,
            CountFilter::Shape(s) => k.shape == s,
        }
    }
}

/// A structured question, answerable against any scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Query {
    Relation { a: Kind, rel: Relation, b: Kind },
    Count(CountFilter),
    Exists(Kind),
}

impl Query {
    pub fn category(&self) -> Category {
        match self {
            Query::Relation { rel, .. } => rel.category(),
            Query::Count(_) => Category::Count,
            Query::Exists(_) => Category::Existence,
        }
    }

    pub fn question(&self) -> String {
        match self {
            Query::Relation { a, rel, b } => format!("is the {} {} the {} ?", a.phrase(), rel.phrase(), b.phrase()),
            Query::Count(CountFilter::Color(c)) => format!("how many {} objects are there ?", c.name()),
            Query::Count(CountFilter::Shape(s)) => format!("how many {} are there ?", s.plural()),
            Query::Exists(k) => format!("is there a {} ?", k.phrase()),
        }
    }

    /// The answer and a trace of the predicate that produced it, or `None`
    /// when the scene does not support the question.
    pub fn derive(&self, scene: &SceneSpec) -> Option<(String, String)> {
        let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
        match *self {
            Query::Relation { a, rel, b } => {
                let (oa, ob) = (scene.find(a)?, scene.find(b)?);
                let (axis, va, vb) = match rel.category() {
                    Category::RelationLr => ("col", oa.cell.1, ob.cell.1),
                    _ => ("row", oa.cell.0, ob.cell.0),
                };
                if va == vb {
                    return None;
                }
                let holds = match rel {
                    Relation::Left | Relation::Above => va < vb,
                    Relation::Right | Relation::Below => va > vb,
                };
                let trace = format!("{axis}({})={va} {axis}({})={vb} {rel:?}={holds}", a.phrase(), b.phrase());
                Some((yn(holds), trace))
            }
            Query::Count(f) => {
                let n = scene.objects.iter().filter(|o| f.matches(o.kind())).count();
                Some((n.to_string(), format!("count({f:?})={n}")))
            }
            Query::Exists(k) => {
                let found = scene.find(k).is_some();
                Some((yn(found), format!("exists({})={found}", k.phrase())))
            }
        }
    }

    /// Inverse of [`question`](Self::question).
    pub fn parse(question: &str) -> Result<Query> {
        let bad = || Error::Format(format!("unrecognized question {question:?}"));
        let w: Vec<&str> = question.split_whitespace().collect();
        let kind = |c: &str, s: &str| -> Result<Kind> {
            Ok(Kind {
                color: Color::ALL.into_iter().find(|x| x.name() == c).ok_or_else(bad)?,
                shape: Shape::ALL.into_iter().find(|x| x.name() == s).ok_or_else(bad)?,
            })
        };
        let q = match w.as_slice() {
            ["is", "there", "a", c, s, "?"] => Query::Exists(kind(c, s)?),
            ["how", "many", c, "objects", "are", "there", "?"] => Query::Count(CountFilter::Color(
                Color::ALL.into_iter().find(|x| x.name() == *c).ok_or_else(bad)?,
            )),
            ["how", "many", p, "are", "there", "?"] => Query::Count(CountFilter::Shape(
                Shape::ALL.into_iter().find(|x| x.plural() == *p).ok_or_else(bad)?,
            )),
            ["is", "the", c1, s1, "to", "the", side, "of", "the", c2, s2, "?"] => Query::Relation {
                a: kind(c1, s1)?,
                rel: match *side {
                    "left" => Relation::Left,
                    "right" => Relation::Right,
                    _ => return Err(bad()),
                },
                b: kind(c2, s2)?,
            },
            ["is", "the", c1, s1, rel, "the", c2, s2, "?"] => Query::Relation {
                a: kind(c1, s1)?,
                rel: match *rel {
                    "above" => Relation::Above,
                    "below" => Relation::Below,
                    _ => return Err(bad()),
                },
                b: kind(c2, s2)?,
            },
            _ => return Err(bad()),
        };
        Ok(q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QAExample {
    pub scene: SceneSpec,
    pub category: Category,
    pub query: Query,
    pub question: String,
    pub answer: String,
    pub derivation: String,
}

impl QAExample {
    pub fn from_query(scene: SceneSpec, query: Query) -> Option<Self> {
        let (answer, derivation) = query.derive(&scene)?;
        Some(Self {
            category: query.category(),
            question: query.question(),
            query,
            scene,
            answer,
            derivation,
        })
    }
}

/// Candidate answers a guesser could give for a category.
pub fn answer_space(category: Category, max_objects: usize) -> Vec<String> {
    match category {
        Category::Count => (0..=max_objects).map(|n| n.to_string()).collect(),
        _ => vec!["yes".into(), "no".into()],
    }
}

/// Draws a question of `category` about `scene`; `None` if the scene cannot
/// support one (a skip, not an error).
pub fn gen_qa(scene: &SceneSpec, category: Category, seed: u64) -> Option<QAExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query = match category {
        Category::RelationLr | Category::RelationAb => {
            let lr = category == Category::RelationLr;
            let axis = |c: (usize, usize)| if lr { c.1 } else { c.0 };
            let pairs: Vec<(Kind, Kind)> = scene
                .objects
                .iter()
                .flat_map(|a| scene.objects.iter().map(move |b| (a, b)))
                .filter(|(a, b)| axis(a.cell) != axis(b.cell))
                .map(|(a, b)| (a.kind(), b.kind()))
                .collect();
            let &(a, b) = pairs.choose(&mut rng)?;
            let rels = if lr {
                [Relation::Left, Relation::Right]
            } else {
                [Relation::Above, Relation::Below]
            };
            Query::Relation {
                a,
                rel: *rels.choose(&mut rng).expect("two"),
                b,
            }
        }
        Category::Count => {
            // mostly ask about attributes that are present
            let f = if rng.random_bool(0.75) {
                let o = scene.objects.choose(&mut rng)?;
                if rng.random_bool(0.5) {
                    CountFilter::Color(o.color)
                } else {
                    CountFilter::Shape(o.shape)
                }
            } else if rng.random_bool(8.0 / 11.0) {
                CountFilter::Color(*Color::ALL.choose(&mut rng).expect("palette"))
            } else {
                CountFilter::Shape(*Shape::ALL.choose(&mut rng).expect("shapes"))
            };
            Query::Count(f)
        }
        Category::Existence => {
            let present = rng.random_bool(0.5);
            let absent: Vec<Kind> = Kind::all().filter(|k| scene.find(*k).is_none()).collect();
            let k = if present || absent.is_empty() {
                scene.objects.choose(&mut rng)?.kind()
            } else {
                *absent.choose(&mut rng).expect("non-empty")
            };
            Query::Exists(k)
        }
    };
    QAExample::from_query(scene.clone(), query)
}

/// Whitespace-collapsed, lowercased.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}
