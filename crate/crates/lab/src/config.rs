//! Line-oriented `section.key = value` configuration text.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// One `key = value` line. Columns are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
    pub value_column: usize,
}

impl Entry {
    pub fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column: self.value_column,
            message: message.into(),
        }
    }

    pub fn list(&self) -> Vec<&str> {
        split_list(&self.value)
    }

    pub fn u64(&self) -> Result<u64, ParseError> {
        self.value
            .parse()
            .map_err(|_| self.error(format!("expected a nonnegative integer, found {:?}", self.value)))
    }

    pub fn i64(&self) -> Result<i64, ParseError> {
        self.value
            .parse()
            .map_err(|_| self.error(format!("expected an integer, found {:?}", self.value)))
    }

    pub fn f64(&self) -> Result<f64, ParseError> {
        parse_number(&self.value).ok_or_else(|| self.error(format!("expected a number, found {:?}", self.value)))
    }

    pub fn rational(&self) -> Result<BigRational, ParseError> {
        parse_rational(&self.value)
            .ok_or_else(|| self.error(format!("expected a rational p/q, found {:?}", self.value)))
    }

    pub fn i64_list(&self) -> Result<Vec<i64>, ParseError> {
        self.list()
            .into_iter()
            .map(|t| t.parse().map_err(|_| self.error(format!("expected an integer, found {t:?}"))))
            .collect()
    }

    pub fn u64_list(&self) -> Result<Vec<u64>, ParseError> {
        self.list()
            .into_iter()
            .map(|t| t.parse().map_err(|_| self.error(format!("expected a nonnegative integer, found {t:?}"))))
            .collect()
    }
}

pub fn split_list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()
}

/// `p`, `p/q` or a decimal.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some((p, q)) = text.split_once('/') {
        let p: BigInt = p.trim().parse().ok()?;
        let q: BigInt = q.trim().parse().ok()?;
        if q == BigInt::from(0) {
            return None;
        }
        return Some(BigRational::new(p, q));
    }
    if let Ok(p) = text.parse::<BigInt>() {
        return Some(BigRational::from_integer(p));
    }
    let (whole, frac) = text.split_once('.')?;
    let digits = format!("{whole}{frac}");
    let p: BigInt = digits.parse().ok()?;
    Some(BigRational::new(p, BigInt::from(10u32).pow(frac.len() as u32)))
}

/// A float or a rational `p/q`.
pub fn parse_number(text: &str) -> Option<f64> {
    let text = text.trim();
    if text.contains('/') {
        use num_traits::ToPrimitive;
        return parse_rational(text)?.to_f64();
    }
    text.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn valid_key(key: &str) -> bool {
    key.contains('.')
        && key.split('.').all(|part| {
            !part.is_empty()
                && part
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

/// Splits `text` into entries in file order. `#` starts a comment.
pub fn parse_lines(text: &str) -> Result<Vec<Entry>, ParseError> {
    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let Some(eq) = content.find('=') else {
            let column = content.len() - content.trim_start().len() + 1;
            return Err(ParseError {
                line,
                column,
                message: "expected `key = value`".into(),
            });
        };
        let key = content[..eq].trim();
        let key_column = content.len() - content.trim_start().len() + 1;
        if !valid_key(key) {
            return Err(ParseError {
                line,
                column: key_column,
                message: format!("invalid key {key:?}; keys look like `section.name`"),
            });
        }
        let after = &content[eq + 1..];
        let value = after.trim();
        let value_column = eq + 2 + (after.len() - after.trim_start().len());
        if value.is_empty() {
            return Err(ParseError {
                line,
                column: value_column,
                message: format!("missing value for {key}"),
            });
        }
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(ParseError {
                line,
                column: key_column,
                message: format!("duplicate key {key} (first set on line {first})"),
            });
        }
        entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
            value_column,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let text = "# header\nconstruction.catalog = chacon  # trailing\n\n  plan.depth=12\n";
        let e = parse_lines(text).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].key.as_str(), e[0].value.as_str(), e[0].line), ("construction.catalog", "chacon", 2));
        assert_eq!(e[0].value_column, 24);
        assert_eq!((e[1].key.as_str(), e[1].value.as_str(), e[1].line, e[1].value_column), ("plan.depth", "12", 4, 14));
    }

    #[test]
    fn reports_positions() {
        let err = parse_lines("plan.depth = 3\nnonsense line\n").unwrap_err();
        assert_eq!((err.line, err.column), (2, 1));
        let err = parse_lines("plan.depth =   \n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_lines("  depth = 3\n").unwrap_err();
        assert_eq!((err.line, err.column), (1, 3));
        let err = parse_lines("plan.depth = 3\nplan.depth = 4\n").unwrap_err();
        assert!(err.message.contains("duplicate"));
        let e = &parse_lines("plan.depth = x\n").unwrap()[0];
        let err = e.u64().unwrap_err();
        assert_eq!((err.line, err.column), (1, 14));
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_rational("3/6").unwrap(), BigRational::new(1.into(), 2.into()));
        assert_eq!(parse_rational("0.25").unwrap(), BigRational::new(1.into(), 4.into()));
        assert_eq!(parse_rational("-7").unwrap(), BigRational::from_integer((-7).into()));
        assert!(parse_rational("1/0").is_none());
        assert_eq!(parse_number("1/4"), Some(0.25));
        assert_eq!(parse_number("1e-3"), Some(0.001));
        assert_eq!(split_list(" 1, 2 ,,3 "), vec!["1", "2", "3"]);
    }
}
