use std::collections::{BTreeMap, BTreeSet};

use crate::collection::ParamValuePair;

pub const TERMINATOR: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Terminator,
    /// A request template name, always the first token of an example.
    Request(String),
    /// A pair scoped to the template it was observed on.
    Pair {
        template_id: String,
        pair: ParamValuePair,
    },
}

/// Token table: terminator is id 0, then request names, then pairs, each
/// group in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: BTreeMap<Token, usize>,
}

impl Vocabulary {
    pub fn build(corpus: &[(String, Vec<ParamValuePair>)]) -> Self {
        let mut names = BTreeSet::new();
        let mut pairs = BTreeSet::new();
        for (template_id, list) in corpus {
            names.insert(template_id.clone());
            for pair in list {
                pairs.insert((template_id.clone(), pair.clone()));
            }
        }
        let tokens: Vec<Token> = std::iter::once(Token::Terminator)
            .chain(names.into_iter().map(Token::Request))
            .chain(
                pairs
                    .into_iter()
                    .map(|(template_id, pair)| Token::Pair { template_id, pair }),
            )
            .collect();
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&Token> {
        self.tokens.get(id)
    }

    pub fn id(&self, token: &Token) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn request_id(&self, template_id: &str) -> Option<usize> {
        self.id(&Token::Request(template_id.to_string()))
    }

    /// Request names known to the vocabulary.
    pub fn templates(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Request(name) => Some(name.as_str()),
            _ => None,
        })
    }

    /// `[request, pair.., terminator]` per corpus entry.
    pub fn encode(&self, corpus: &[(String, Vec<ParamValuePair>)]) -> Vec<Vec<usize>> {
        corpus
            .iter()
            .filter_map(|(template_id, list)| {
                let mut ids = vec![self.request_id(template_id)?];
                for pair in list {
                    ids.push(self.id(&Token::Pair {
                        template_id: template_id.clone(),
                        pair: pair.clone(),
                    })?);
                }
                ids.push(TERMINATOR);
                Some(ids)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(t: &str, pairs: &[(&str, &str)]) -> (String, Vec<ParamValuePair>) {
        (
            t.into(),
            pairs.iter().map(|(k, v)| ParamValuePair::new(*k, *v)).collect(),
        )
    }

    #[test]
    fn one_template_one_pair() {
        let v = Vocabulary::build(&[entry("GET /a", &[("x", "1")])]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.token(TERMINATOR), Some(&Token::Terminator));
        assert_eq!(v.encode(&[entry("GET /a", &[("x", "1")])]), vec![vec![1, 2, 0]]);
    }

    #[test]
    fn empty_corpus_has_only_terminator() {
        assert_eq!(Vocabulary::build(&[]).len(), 1);
    }

    #[test]
    fn pairs_are_scoped_by_template() {
        let v = Vocabulary::build(&[entry("GET /a", &[("x", "1")]), entry("GET /b", &[("x", "1")])]);
        assert_eq!(v.len(), 5);
        let ids: BTreeSet<usize> = (0..v.len()).collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn ordering_is_lexicographic() {
        let v = Vocabulary::build(&[entry("GET /b", &[("y", "2"), ("x", "1")]), entry("GET /a", &[])]);
        assert_eq!(v.request_id("GET /a"), Some(1));
        assert_eq!(v.request_id("GET /b"), Some(2));
        assert_eq!(
            v.token(3),
            Some(&Token::Pair {
                template_id: "GET /b".into(),
                pair: ParamValuePair::new("x", "1")
            })
        );
        assert_eq!(v.templates().collect::<Vec<_>>(), ["GET /a", "GET /b"]);
    }
}
