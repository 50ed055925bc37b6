//! CNF formulas with literal weights, DIMACS parsing, and the brute-force
//! counting oracle.
//!
//! Weights follow two line forms, both accepted anywhere after the header:
//!
//! - `w <var> <p>`: cachet style, `W(x,1) = p` and `W(x,0) = 1 - p`
//! - `w <var> <w0> <w1>`: an arbitrary weight pair
//!
//! Variables without a weight line default to `(1.0, 1.0)`.

use std::fmt::Write as _;
use std::io::Read;

use thiserror::Error;

/// Largest variable count the brute-force oracle accepts.
pub const BRUTE_FORCE_MAX_VARS: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: literal {lit} out of range for {num_vars} variables")]
    LiteralOutOfRange { line: usize, lit: i64, num_vars: usize },
    #[error("clause not terminated by 0 at end of input")]
    UnterminatedClause,
    #[error("line {line}: invalid weight line `{text}`")]
    InvalidWeightLine { line: usize, text: String },
    #[error("line {line}: invalid token `{token}`")]
    InvalidToken { line: usize, token: String },
    #[error("brute-force oracle limited to {max} variables, formula has {found}")]
    TooManyVariables { max: usize, found: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// A CNF formula over variables `1..=num_vars`.
///
/// Clauses never contain a duplicate literal or a complementary pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnfFormula {
    num_vars: usize,
    clauses: Vec<Vec<i32>>,
}

impl CnfFormula {
    /// Builds a formula, dropping tautologies and duplicate literals.
    pub fn new(num_vars: usize, clauses: Vec<Vec<i32>>) -> Result<Self, FormulaError> {
        let mut kept = Vec::with_capacity(clauses.len());
        for clause in clauses {
            for &lit in &clause {
                if lit == 0 || lit.unsigned_abs() as usize > num_vars {
                    return Err(FormulaError::LiteralOutOfRange {
                        line: 0,
                        lit: lit as i64,
                        num_vars,
                    });
                }
            }
            if let Some(c) = normalize_clause(clause) {
                kept.push(c);
            }
        }
        Ok(Self {
            num_vars,
            clauses: kept,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn clauses(&self) -> &[Vec<i32>] {
        &self.clauses
    }

    /// Number of clauses each variable occurs in, indexed by variable id
    /// (slot 0 unused).
    pub fn occurrences(&self) -> Vec<usize> {
        let mut occ = vec![0; self.num_vars + 1];
        for clause in &self.clauses {
            for &lit in clause {
                occ[lit.unsigned_abs() as usize] += 1;
            }
        }
        occ
    }

    /// True iff the assignment (bit `v-1` is the value of variable `v`)
    /// satisfies every clause.
    pub fn is_satisfied_by(&self, assignment: &[bool]) -> bool {
        self.clauses
            .iter()
            .all(|c| clause_satisfied(c, |v| assignment[v - 1]))
    }
}

/// Evaluates a clause under a variable valuation.
pub fn clause_satisfied(clause: &[i32], value: impl Fn(usize) -> bool) -> bool {
    clause
        .iter()
        .any(|&lit| value(lit.unsigned_abs() as usize) == (lit > 0))
}

fn normalize_clause(clause: Vec<i32>) -> Option<Vec<i32>> {
    let mut out: Vec<i32> = Vec::with_capacity(clause.len());
    for lit in clause {
        if out.contains(&-lit) {
            return None;
        }
        if !out.contains(&lit) {
            out.push(lit);
        }
    }
    Some(out)
}

/// Literal weights `W(x, 0)` and `W(x, 1)` for every variable.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    // slot 0 unused so variable ids index directly
    pairs: Vec<(f64, f64)>,
}

impl WeightFunction {
    pub fn unit(num_vars: usize) -> Self {
        Self {
            pairs: vec![(1.0, 1.0); num_vars + 1],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.pairs.len() - 1
    }

    /// `(W(x,0), W(x,1))` for variable `var`.
    pub fn get(&self, var: usize) -> (f64, f64) {
        self.pairs[var]
    }

    pub fn set(&mut self, var: usize, w0: f64, w1: f64) {
        self.pairs[var] = (w0, w1);
    }

    pub fn weight(&self, var: usize, value: bool) -> f64 {
        let (w0, w1) = self.pairs[var];
        if value {
            w1
        } else {
            w0
        }
    }

    pub fn is_unit(&self, var: usize) -> bool {
        self.pairs[var] == (1.0, 1.0)
    }
}

/// Parses a DIMACS CNF file with optional weight lines.
pub fn parse_dimacs<R: Read>(mut reader: R) -> Result<(CnfFormula, WeightFunction), FormulaError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| FormulaError::Io(e.to_string()))?;
    parse_dimacs_str(&text)
}

pub fn parse_dimacs_str(text: &str) -> Result<(CnfFormula, WeightFunction), FormulaError> {
    let mut header: Option<(usize, usize)> = None;
    let mut weights: Option<WeightFunction> = None;
    let mut clauses: Vec<Vec<i32>> = Vec::new();
    let mut current: Vec<i32> = Vec::new();
    let mut raw_clause_count = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('c') || trimmed.starts_with('%') {
            continue;
        }
        if trimmed.starts_with('p') {
            if header.is_some() {
                return Err(FormulaError::MalformedHeader(format!(
                    "duplicate header on line {line_no}"
                )));
            }
            header = Some(parse_header(trimmed)?);
            weights = Some(WeightFunction::unit(header.unwrap().0));
            continue;
        }
        let Some((num_vars, _)) = header else {
            return Err(FormulaError::MalformedHeader(format!(
                "content before `p cnf` header on line {line_no}"
            )));
        };
        if trimmed.starts_with('w') {
            let w = weights.as_mut().expect("weights set with header");
            parse_weight_line(trimmed, line_no, num_vars, w)?;
            continue;
        }
        for token in trimmed.split_whitespace() {
            let lit: i64 = token.parse().map_err(|_| FormulaError::InvalidToken {
                line: line_no,
                token: token.to_string(),
            })?;
            if lit == 0 {
                raw_clause_count += 1;
                if let Some(c) = normalize_clause(std::mem::take(&mut current)) {
                    clauses.push(c);
                }
                continue;
            }
            if lit.unsigned_abs() as usize > num_vars {
                return Err(FormulaError::LiteralOutOfRange {
                    line: line_no,
                    lit,
                    num_vars,
                });
            }
            current.push(lit as i32);
        }
    }

    let Some((num_vars, declared)) = header else {
        return Err(FormulaError::MalformedHeader("missing `p cnf` header".into()));
    };
    if !current.is_empty() {
        return Err(FormulaError::UnterminatedClause);
    }
    if raw_clause_count != declared {
        log::warn!("header declares {declared} clauses, found {raw_clause_count}");
    }
    Ok((
        CnfFormula { num_vars, clauses },
        weights.expect("weights set with header"),
    ))
}

fn parse_header(line: &str) -> Result<(usize, usize), FormulaError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bad = || FormulaError::MalformedHeader(line.to_string());
    if fields.len() != 4 || fields[0] != "p" || fields[1] != "cnf" {
        return Err(bad());
    }
    let vars: usize = fields[2].parse().map_err(|_| bad())?;
    let clauses: usize = fields[3].parse().map_err(|_| bad())?;
    if vars > i32::MAX as usize {
        return Err(bad());
    }
    Ok((vars, clauses))
}

fn parse_weight_line(
    line: &str,
    line_no: usize,
    num_vars: usize,
    weights: &mut WeightFunction,
) -> Result<(), FormulaError> {
    let bad = || FormulaError::InvalidWeightLine {
        line: line_no,
        text: line.to_string(),
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields[0] != "w" || !(fields.len() == 3 || fields.len() == 4) {
        return Err(bad());
    }
    let var: usize = fields[1].parse().map_err(|_| bad())?;
    if var == 0 || var > num_vars {
        return Err(bad());
    }
    let nums: Vec<f64> = fields[2..]
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    if nums.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    match nums[..] {
        [p] => weights.set(var, 1.0 - p, p),
        [w0, w1] => weights.set(var, w0, w1),
        _ => unreachable!(),
    }
    Ok(())
}

/// Writes the formula back out in DIMACS form. Non-unit weights use the
/// two-value `w` form so that the pair survives a round trip exactly.
pub fn to_dimacs(formula: &CnfFormula, weights: &WeightFunction) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "p cnf {} {}", formula.num_vars, formula.clauses.len());
    for clause in &formula.clauses {
        for lit in clause {
            let _ = write!(out, "{lit} ");
        }
        out.push_str("0\n");
    }
    for var in 1..=formula.num_vars {
        if !weights.is_unit(var) {
            let (w0, w1) = weights.get(var);
            let _ = writeln!(out, "w {var} {w0:?} {w1:?}");
        }
    }
    out
}

/// Sums `phi(tau) * prod_x W(x, tau(x))` over every assignment.
pub fn brute_force_count(formula: &CnfFormula, weights: &WeightFunction) -> Result<f64, FormulaError> {
    let n = formula.num_vars;
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(FormulaError::TooManyVariables {
            max: BRUTE_FORCE_MAX_VARS,
            found: n,
        });
    }
    // bit v-1 of an assignment word is the value of variable v
    let masks: Vec<(u32, u32)> = formula
        .clauses
        .iter()
        .map(|c| {
            c.iter().fold((0u32, 0u32), |(pos, neg), &lit| {
                let bit = 1u32 << (lit.unsigned_abs() - 1);
                if lit > 0 {
                    (pos | bit, neg)
                } else {
                    (pos, neg | bit)
                }
            })
        })
        .collect();

    let low_bits = n / 2;
    let low_table = weight_table(weights, 1, low_bits);
    let high_table = weight_table(weights, low_bits + 1, n - low_bits);
    let low_mask = (1u32 << low_bits) - 1;

    let mut total = 0.0;
    for assignment in 0u32..(1u32 << n) {
        let sat = masks
            .iter()
            .all(|&(pos, neg)| assignment & pos != 0 || !assignment & neg != 0);
        if sat {
            total += low_table[(assignment & low_mask) as usize]
                * high_table[(assignment >> low_bits) as usize];
        }
    }
    Ok(total)
}

// Product of weights for every valuation of `count` consecutive variables.
fn weight_table(weights: &WeightFunction, first_var: usize, count: usize) -> Vec<f64> {
    (0u32..(1u32 << count))
        .map(|bits| {
            (0..count)
                .map(|k| weights.weight(first_var + k, bits >> k & 1 == 1))
                .product()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_instance() {
        let (f, w) = parse_dimacs_str("p cnf 2 1\n1 -2 0\n").unwrap();
        assert_eq!(f.num_vars(), 2);
        assert_eq!(f.clauses(), &[vec![1, -2]]);
        assert_eq!(w.get(1), (1.0, 1.0));
        assert_eq!(w.get(2), (1.0, 1.0));
    }

    #[test]
    fn cachet_weight_line() {
        let (f, w) = parse_dimacs_str("p cnf 1 1\n1 0\nw 1 0.7\n").unwrap();
        assert_eq!(f.clauses(), &[vec![1]]);
        let (w0, w1) = w.get(1);
        assert!((w0 - 0.3).abs() < 1e-15);
        assert_eq!(w1, 0.7);
    }

    #[test]
    fn extended_weight_line() {
        let (_, w) = parse_dimacs_str("p cnf 2 0\nw 2 -1.5 4\n").unwrap();
        assert_eq!(w.get(2), (-1.5, 4.0));
        assert_eq!(w.get(1), (1.0, 1.0));
    }

    #[test]
    fn literal_out_of_range() {
        let err = parse_dimacs_str("p cnf 2 1\n1 3 0\n").unwrap_err();
        assert!(matches!(err, FormulaError::LiteralOutOfRange { lit: 3, .. }));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            parse_dimacs_str("1 2 0\n"),
            Err(FormulaError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_dimacs_str("p cnf x 1\n"),
            Err(FormulaError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_dimacs_str("c nothing here\n"),
            Err(FormulaError::MalformedHeader(_))
        ));
    }

    #[test]
    fn unterminated_clause() {
        assert_eq!(
            parse_dimacs_str("p cnf 2 1\n1 2\n"),
            Err(FormulaError::UnterminatedClause)
        );
    }

    #[test]
    fn invalid_weight_lines() {
        for bad in ["w 3 0.5", "w 1", "w 1 abc", "w 1 0.1 0.2 0.3", "w 0 0.5", "w 1 inf"] {
            let text = format!("p cnf 2 0\n{bad}\n");
            assert!(
                matches!(
                    parse_dimacs_str(&text),
                    Err(FormulaError::InvalidWeightLine { .. })
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn clauses_span_lines_and_tautologies_drop() {
        let (f, _) = parse_dimacs_str("c hi\np cnf 3 3\n1 2\n 3 0 1 -1 0\n2 2 -3 0\n").unwrap();
        assert_eq!(f.clauses(), &[vec![1, 2, 3], vec![2, -3]]);
    }

    #[test]
    fn brute_force_small_cases() {
        let (f, w) = parse_dimacs_str("p cnf 1 1\n1 0\nw 1 0.7\n").unwrap();
        assert!((brute_force_count(&f, &w).unwrap() - 0.7).abs() < 1e-15);

        let f = CnfFormula::new(2, vec![vec![1, 2]]).unwrap();
        assert_eq!(brute_force_count(&f, &WeightFunction::unit(2)).unwrap(), 3.0);
    }

    #[test]
    fn brute_force_guard() {
        let f = CnfFormula::new(26, vec![]).unwrap();
        assert!(matches!(
            brute_force_count(&f, &WeightFunction::unit(26)),
            Err(FormulaError::TooManyVariables { .. })
        ));
    }

    #[test]
    fn empty_clause_counts_zero() {
        let f = CnfFormula::new(2, vec![vec![1], vec![]]).unwrap();
        assert_eq!(brute_force_count(&f, &WeightFunction::unit(2)).unwrap(), 0.0);
    }
}
