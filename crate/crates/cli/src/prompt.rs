use std::io::{self, BufRead, Write};

use vqbe_core::{Label, LabelOracle, OracleError};

/// Asks for labels on stderr and reads answers from stdin.
pub struct PromptOracle<R> {
    input: R,
}

impl<R: BufRead> PromptOracle<R> {
    pub fn new(input: R) -> Self {
        Self { input }
    }
}

pub fn parse_answer(line: &str) -> Option<Label> {
    match line.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "pos" | "1" | "+" => Some(Label::Pos),
        "n" | "no" | "neg" | "0" | "-" => Some(Label::Neg),
        _ => None,
    }
}

impl<R: BufRead + Send> LabelOracle for PromptOracle<R> {
    fn label(&mut self, vid: &str) -> Result<Label, OracleError> {
        loop {
            eprint!("does {vid} show the event? [y/n] ");
            let _ = io::stderr().flush();
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) | Err(_) => return Err(OracleError::Aborted),
                Ok(_) => {}
            }
            if let Some(l) = parse_answer(&line) {
                return Ok(l);
            }
            eprintln!("please answer y or n");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers() {
        assert_eq!(parse_answer(" Yes\n"), Some(Label::Pos));
        assert_eq!(parse_answer("n"), Some(Label::Neg));
        assert_eq!(parse_answer("maybe"), None);
    }

    #[test]
    fn retries_then_aborts_at_eof() {
        let mut o = PromptOracle::new(io::Cursor::new("what\ny\n"));
        assert_eq!(o.label("a").unwrap(), Label::Pos);
        assert!(matches!(o.label("b"), Err(OracleError::Aborted)));
    }
}
