use std::fmt;
use std::str::FromStr;

/// Which delay channels the reduced model may use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DelaySpec {
    None,
    Input,
    Output,
    Io,
    /// Explicit input and output masks, `1` marks a free channel.
    Mask { input: Vec<bool>, output: Vec<bool> },
}

impl DelaySpec {
    /// Input and output masks for a model with `nu` inputs and `ny` outputs.
    pub fn masks(&self, nu: usize, ny: usize) -> anyhow::Result<(Vec<bool>, Vec<bool>)> {
        Ok(match self {
            DelaySpec::None => (vec![false; nu], vec![false; ny]),
            DelaySpec::Input => (vec![true; nu], vec![false; ny]),
            DelaySpec::Output => (vec![false; nu], vec![true; ny]),
            DelaySpec::Io => (vec![true; nu], vec![true; ny]),
            DelaySpec::Mask { input, output } => {
                anyhow::ensure!(
                    input.len() == nu && output.len() == ny,
                    "--delays: mask lengths {},{} do not match the model's {nu} inputs and {ny} outputs",
                    input.len(),
                    output.len()
                );
                (input.clone(), output.clone())
            }
        })
    }
}

fn bits(s: &str) -> Result<Vec<bool>, String> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(format!("mask character {other:?} is not 0 or 1")),
        })
        .collect()
}

impl FromStr for DelaySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(DelaySpec::None),
            "input" => Ok(DelaySpec::Input),
            "output" => Ok(DelaySpec::Output),
            "io" => Ok(DelaySpec::Io),
            _ => {
                let rest = s
                    .strip_prefix("mask:")
                    .ok_or_else(|| format!("expected none, input, output, io or mask:<bits>,<bits>, got {s:?}"))?;
                let (i, o) = rest.split_once(',').ok_or("mask needs input and output bits separated by ','")?;
                Ok(DelaySpec::Mask {
                    input: bits(i)?,
                    output: bits(o)?,
                })
            }
        }
    }
}

impl fmt::Display for DelaySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = |m: &[bool]| m.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>();
        match self {
            DelaySpec::None => f.write_str("none"),
            DelaySpec::Input => f.write_str("input"),
            DelaySpec::Output => f.write_str("output"),
            DelaySpec::Io => f.write_str("io"),
            DelaySpec::Mask { input, output } => write!(f, "mask:{},{}", bits(input), bits(output)),
        }
    }
}
