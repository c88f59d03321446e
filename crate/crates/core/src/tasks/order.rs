use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderName {
    Default,
    Reverse,
    Alphabet,
    Custom,
}

impl OrderName {
    pub const NAMED: [OrderName; 3] = [OrderName::Default, OrderName::Reverse, OrderName::Alphabet];

    pub fn as_str(self) -> &'static str {
        match self {
            OrderName::Default => "default",
            OrderName::Reverse => "reverse",
            OrderName::Alphabet => "alphabet",
            OrderName::Custom => "custom",
        }
    }
}

impl fmt::Display for OrderName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(OrderName::Default),
            "reverse" => Ok(OrderName::Reverse),
            "alphabet" => Ok(OrderName::Alphabet),
            "custom" => Ok(OrderName::Custom),
            other => Err(Error::config(format!("unknown task order {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOrder {
    pub name: OrderName,
    pub ids: Vec<String>,
}

impl TaskOrder {
    /// A custom order; must be a permutation of `roster`.
    pub fn custom(roster: &[String], ids: Vec<String>) -> Result<Self> {
        let a: BTreeSet<&String> = roster.iter().collect();
        let b: BTreeSet<&String> = ids.iter().collect();
        if a != b || ids.len() != roster.len() {
            return Err(Error::config("custom order is not a permutation of the roster"));
        }
        Ok(Self {
            name: OrderName::Custom,
            ids,
        })
    }
}

/// Named order over `roster`. `custom` needs [`TaskOrder::custom`].
pub fn task_order(name: &str, roster: &[String]) -> Result<TaskOrder> {
    if roster.is_empty() {
        return Err(Error::config("empty roster"));
    }
    let name: OrderName = name.parse()?;
    let mut ids = roster.to_vec();
    match name {
        OrderName::Default => {}
        OrderName::Reverse => ids.reverse(),
        OrderName::Alphabet => ids.sort(),
        OrderName::Custom => {
            return Err(Error::config("a custom order needs an explicit task list"));
        }
    }
    Ok(TaskOrder { name, ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn named_orders() {
        let r = ids(&["t1", "t2", "t3", "t4", "t5", "t6"]);
        assert_eq!(task_order("default", &r).unwrap().ids, r);
        assert_eq!(
            task_order("reverse", &r).unwrap().ids,
            ids(&["t6", "t5", "t4", "t3", "t2", "t1"])
        );
        assert_eq!(
            task_order("alphabet", &ids(&["flickr-like", "edit-like", "vqa-like"]))
                .unwrap()
                .ids,
            ids(&["edit-like", "flickr-like", "vqa-like"])
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(task_order("random", &ids(&["a"])), Err(Error::Config(_))));
        assert!(matches!(task_order("default", &[]), Err(Error::Config(_))));
        let r = ids(&["a", "b"]);
        assert!(TaskOrder::custom(&r, ids(&["b", "a"])).is_ok());
        assert!(TaskOrder::custom(&r, ids(&["a", "a"])).is_err());
        assert!(TaskOrder::custom(&r, ids(&["a"])).is_err());
    }
}
