use super::lexer::{tokenize, Tok, Token};
use super::{BinOp, Func, Node, ParseError, Var};

pub(crate) fn parse(src: &str, state_dim: usize) -> Result<Node, ParseError> {
    let tokens = tokenize(src)?;
    if matches!(tokens[0].tok, Tok::End) {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        tokens,
        at: 0,
        state_dim,
    };
    let node = p.expr()?;
    let tail = p.peek();
    if tail.tok != Tok::End {
        return Err(ParseError::Syntax {
            pos: tail.pos,
            message: "unexpected trailing input".into(),
        });
    }
    Ok(node)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    state_dim: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if t.tok != Tok::End {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.bump();
        if t.tok == want {
            Ok(t)
        } else {
            Err(ParseError::Syntax {
                pos: t.pos,
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.power()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.power()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek().tok == Tok::Caret {
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Binary(BinOp::Pow, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => self.identifier(name, t.pos),
            Tok::End => Err(ParseError::Syntax {
                pos: t.pos,
                message: "unexpected end of input".into(),
            }),
            _ => Err(ParseError::Syntax {
                pos: t.pos,
                message: "expected a number, variable, function call or `(`".into(),
            }),
        }
    }

    fn identifier(&mut self, name: String, pos: usize) -> Result<Node, ParseError> {
        if let Some(func) = Func::from_name(&name) {
            self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
            let mut args = vec![self.expr()?];
            while self.peek().tok == Tok::Comma {
                self.bump();
                args.push(self.expr()?);
            }
            self.expect(Tok::RParen, "`)` or `,`")?;
            if args.len() != func.arity() {
                return Err(ParseError::Arity {
                    name,
                    pos,
                    expected: func.arity(),
                    found: args.len(),
                });
            }
            return Ok(Node::Call(func, args));
        }
        if name == "t" {
            return Ok(Node::Var(Var::Time));
        }
        if let Some(idx) = state_index(&name) {
            if (1..=self.state_dim).contains(&idx) {
                return Ok(Node::Var(Var::State(idx - 1)));
            }
        }
        Err(ParseError::UnknownIdentifier { name, pos })
    }
}

/// `x<digits>` without a leading zero, one-based.
fn state_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}
