//! Scalar expressions in the coordinates `x`, `y` (and `r = |(x, y)|`),
//! used for user exponents and custom kernel profiles.

use evalexpr::{
    build_operator_tree, Context, DefaultNumericTypes, EvalexprError, EvalexprResult, Node, Value,
};

use crate::error::{Error, Result};

/// A parsed expression. Integer literals are read as floats, so `3/2` is 1.5.
#[derive(Clone, Debug)]
pub struct Expr {
    source: String,
    tree: Node<DefaultNumericTypes>,
}

struct Vars {
    values: [Value<DefaultNumericTypes>; 6],
}

const NAMES: [&str; 6] = ["x", "y", "r", "t", "pi", "e"];

impl Context for Vars {
    type NumericTypes = DefaultNumericTypes;

    fn get_value(&self, identifier: &str) -> Option<&Value<DefaultNumericTypes>> {
        NAMES
            .iter()
            .position(|n| *n == identifier)
            .map(|i| &self.values[i])
    }

    fn call_function(
        &self,
        identifier: &str,
        argument: &Value<DefaultNumericTypes>,
    ) -> EvalexprResult<Value<DefaultNumericTypes>, DefaultNumericTypes> {
        let f: fn(f64) -> f64 = match identifier {
            "exp" => f64::exp,
            "ln" => f64::ln,
            "log" => f64::ln,
            "sqrt" => f64::sqrt,
            "abs" => f64::abs,
            "sin" => f64::sin,
            "cos" => f64::cos,
            "tan" => f64::tan,
            "tanh" => f64::tanh,
            "atan" => f64::atan,
            _ => {
                return Err(EvalexprError::FunctionIdentifierNotFound(
                    identifier.to_string(),
                ))
            }
        };
        Ok(Value::Float(f(argument.as_number()?)))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(
        &mut self,
        _disabled: bool,
    ) -> EvalexprResult<(), DefaultNumericTypes> {
        Err(EvalexprError::CustomMessage(
            "builtin toggle unsupported".into(),
        ))
    }
}

/// Appends `.0` to bare integer literals.
fn floatify(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev_ident =
            i > 0 && (chars[i - 1].is_alphanumeric() || chars[i - 1] == '_' || chars[i - 1] == '.');
        if c.is_ascii_digit() && !prev_ident {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if chars.get(i) == Some(&'.') {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if matches!(chars.get(i), Some('e') | Some('E')) {
                let mut k = i + 1;
                if matches!(chars.get(k), Some('+') | Some('-')) {
                    k += 1;
                }
                if chars.get(k).is_some_and(|c| c.is_ascii_digit()) {
                    is_float = true;
                    i = k;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.extend(&chars[start..i]);
            if !is_float {
                out.push_str(".0");
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let tree = build_operator_tree::<DefaultNumericTypes>(&floatify(source))
            .map_err(|e| Error::Expression(format!("{source}: {e}")))?;
        let expr = Self {
            source: source.to_string(),
            tree,
        };
        expr.eval(&[0.5, 0.25], 1.0)?;
        Ok(expr)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates at the point `x` (one or two coordinates) and scale `t`.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        let x0 = x.first().copied().unwrap_or(0.0);
        let y0 = x.get(1).copied().unwrap_or(0.0);
        let vars = Vars {
            values: [
                Value::Float(x0),
                Value::Float(y0),
                Value::Float(x0.hypot(y0)),
                Value::Float(t),
                Value::Float(std::f64::consts::PI),
                Value::Float(std::f64::consts::E),
            ],
        };
        self.tree
            .eval_number_with_context(&vars)
            .map_err(|e| Error::Expression(format!("{}: {e}", self.source)))
    }
}
