use std::collections::HashMap;

/// Character trie over normalized alias keys.
#[derive(Debug, Clone, Default)]
pub(crate) struct AliasTrie {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: HashMap<char, usize>,
    /// Index of the normalized key ending here, if any.
    terminal: Option<usize>,
}

impl AliasTrie {
    pub(crate) fn new() -> Self {
        Self {
            nodes: vec![Node::default()],
        }
    }

    pub(crate) fn insert(&mut self, key: &str, value: usize) {
        let mut cur = 0;
        for c in key.chars() {
            cur = match self.nodes[cur].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[cur].children.insert(c, next);
                    next
                }
            };
        }
        self.nodes[cur].terminal = Some(value);
    }

    pub(crate) const ROOT: usize = 0;

    pub(crate) fn step(&self, node: usize, c: char) -> Option<usize> {
        self.nodes[node].children.get(&c).copied()
    }

    pub(crate) fn terminal(&self, node: usize) -> Option<usize> {
        self.nodes[node].terminal
    }
}
