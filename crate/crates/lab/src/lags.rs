//! Lag expressions such as `-h[J-1]`, `2h6..9+1` or `100..140`.
//!
//! A term is `[-][q]h<stage>[..<stage>][(+|-)m]` or a plain integer range
//! `[-]a[..b]`. A stage is an integer or a bracketed `[J]` / `[J-k]`;
//! bracketed stages keep a trailing offset unambiguous.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageRef {
    Absolute(usize),
    /// `J - k`.
    FromTop(usize),
}

impl StageRef {
    pub fn resolve(self, depth: usize) -> Option<usize> {
        match self {
            StageRef::Absolute(j) => Some(j),
            StageRef::FromTop(k) => depth.checked_sub(k),
        }
    }
}

impl fmt::Display for StageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageRef::Absolute(j) => write!(f, "{j}"),
            StageRef::FromTop(0) => write!(f, "[J]"),
            StageRef::FromTop(k) => write!(f, "[J-{k}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LagTerm {
    Height {
        negative: bool,
        multiple: u64,
        from: StageRef,
        to: StageRef,
        offset: i64,
    },
    Plain {
        from: i64,
        to: i64,
    },
}

/// Parses a stage: `12`, `J`, `J-3`, optionally inside brackets.
pub fn parse_stage(text: &str) -> Result<StageRef, String> {
    let t = text.trim();
    let t = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(t).trim();
    if t == "J" {
        return Ok(StageRef::FromTop(0));
    }
    if let Some(k) = t.strip_prefix("J-") {
        return k
            .trim()
            .parse()
            .map(StageRef::FromTop)
            .map_err(|_| format!("bad stage {text:?}"));
    }
    match t.parse::<usize>() {
        Ok(j) if j >= 1 => Ok(StageRef::Absolute(j)),
        _ => Err(format!("bad stage {text:?}; expected a positive integer, J or J-k")),
    }
}

/// Splits a leading stage token off `rest`; brackets may hold `J-k`.
fn take_stage(rest: &str) -> Result<(StageRef, &str), String> {
    if rest.starts_with('[') {
        let close = rest.find(']').ok_or_else(|| format!("unclosed bracket in {rest:?}"))?;
        return Ok((parse_stage(&rest[..=close])?, &rest[close + 1..]));
    }
    if let Some(after) = rest.strip_prefix('J') {
        return Ok((StageRef::FromTop(0), after));
    }
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    if end == 0 {
        return Err(format!("expected a stage at {rest:?}"));
    }
    Ok((parse_stage(&rest[..end])?, &rest[end..]))
}

pub fn parse_term(text: &str) -> Result<LagTerm, String> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err("empty lag".into());
    }
    let Some(h) = t.find('h') else {
        let (from, to) = match t.split_once("..") {
            Some((a, b)) => (a, b),
            None => (t.as_str(), t.as_str()),
        };
        let parse = |s: &str| s.parse::<i64>().map_err(|_| format!("bad lag {text:?}"));
        let (from, to) = (parse(from)?, parse(to)?);
        if from > to {
            return Err(format!("empty range in {text:?}"));
        }
        return Ok(LagTerm::Plain { from, to });
    };
    let head = &t[..h];
    let (negative, digits) = match head.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, head.strip_prefix('+').unwrap_or(head)),
    };
    let multiple = if digits.is_empty() {
        1
    } else {
        digits
            .parse::<u64>()
            .ok()
            .filter(|&q| q > 0)
            .ok_or_else(|| format!("bad multiple in {text:?}"))?
    };
    let (from, mut rest) = take_stage(&t[h + 1..])?;
    let mut to = from;
    if let Some(after) = rest.strip_prefix("..") {
        let (stage, r) = take_stage(after)?;
        to = stage;
        rest = r;
    }
    let offset = if rest.is_empty() {
        0
    } else if rest.starts_with('+') || rest.starts_with('-') {
        rest.parse::<i64>().map_err(|_| format!("bad offset in {text:?}"))?
    } else {
        return Err(format!("unexpected {rest:?} in {text:?}"));
    };
    Ok(LagTerm::Height {
        negative,
        multiple,
        from,
        to,
        offset,
    })
}

/// A comma-separated list of terms, kept symbolic until a depth is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagList {
    pub terms: Vec<(String, LagTerm)>,
}

/// Lag after resolution, with the term it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedLag {
    pub lag: i64,
    pub source: String,
}

impl LagList {
    pub fn parse(items: &[&str]) -> Result<LagList, String> {
        if items.is_empty() {
            return Err("empty lag list".into());
        }
        let terms = items
            .iter()
            .map(|s| parse_term(s).map(|t| (s.trim().to_string(), t)))
            .collect::<Result<_, _>>()?;
        Ok(LagList { terms })
    }

    /// Expands every term against `levels[j - 1] = l_j` at depth `depth`.
    pub fn resolve(&self, levels: &[u64], depth: usize) -> Result<Vec<ResolvedLag>, String> {
        let mut out = Vec::new();
        for (text, term) in &self.terms {
            match *term {
                LagTerm::Plain { from, to } => {
                    out.extend((from..=to).map(|lag| ResolvedLag { lag, source: text.clone() }))
                }
                LagTerm::Height {
                    negative,
                    multiple,
                    from,
                    to,
                    offset,
                } => {
                    let stage = |s: StageRef| {
                        s.resolve(depth)
                            .filter(|&j| j >= 1 && j <= depth && j <= levels.len())
                            .ok_or_else(|| format!("stage {s} in {text:?} is outside 1..={depth}"))
                    };
                    let (a, b) = (stage(from)?, stage(to)?);
                    if a > b {
                        return Err(format!("empty stage range in {text:?}"));
                    }
                    for j in a..=b {
                        let magnitude = (levels[j - 1] as i128) * multiple as i128 + offset as i128;
                        let lag = if negative { -magnitude } else { magnitude };
                        let lag = i64::try_from(lag).map_err(|_| format!("lag {text:?} overflows"))?;
                        out.push(ResolvedLag { lag, source: text.clone() });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        assert_eq!(
            parse_term("-h[J-1]").unwrap(),
            LagTerm::Height { negative: true, multiple: 1, from: StageRef::FromTop(1), to: StageRef::FromTop(1), offset: 0 }
        );
        assert_eq!(
            parse_term("2h6..9+1").unwrap(),
            LagTerm::Height { negative: false, multiple: 2, from: StageRef::Absolute(6), to: StageRef::Absolute(9), offset: 1 }
        );
        assert_eq!(
            parse_term("hJ-1").unwrap(),
            LagTerm::Height { negative: false, multiple: 1, from: StageRef::FromTop(0), to: StageRef::FromTop(0), offset: -1 }
        );
        assert_eq!(parse_term("-3..2").unwrap(), LagTerm::Plain { from: -3, to: 2 });
        assert!(parse_term("h").is_err());
        assert!(parse_term("0h3").is_err());
        assert!(parse_term("h3x").is_err());
        assert!(parse_term("5..1").is_err());
    }

    #[test]
    fn resolution() {
        let levels = [1, 4, 13, 40, 121];
        let list = LagList::parse(&["-h[J-1]", "h2..3+1", "2h4", "7"]).unwrap();
        let lags: Vec<i64> = list.resolve(&levels, 5).unwrap().iter().map(|r| r.lag).collect();
        assert_eq!(lags, vec![-40, 5, 14, 80, 7]);
        assert!(LagList::parse(&["h6"]).unwrap().resolve(&levels, 5).is_err());
        assert!(LagList::parse(&["h[J-5]"]).unwrap().resolve(&levels, 5).is_err());
    }
}
