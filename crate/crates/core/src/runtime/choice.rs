use std::time::Duration;

use crate::mailbox::{Guard, Pattern, Received, RecvError, RecvOptions, Timeout};
use crate::term::ThreadVars;

use super::Ctx;

type Body<'a, R> = Box<dyn FnOnce(&mut Ctx, Received) -> R + 'a>;
type Fallback<'a, R> = Box<dyn FnOnce(&mut Ctx) -> R + 'a>;
type Test<'a> = Box<dyn FnMut(&mut ThreadVars) -> bool + 'a>;

/// A guarded receive: the first (message, arm) pair that matches wins and
/// its body runs.
///
/// ```no_run
/// # use icomm::runtime::{Choice, Node};
/// # use icomm::mailbox::Pattern;
/// # use icomm::term::Term;
/// # let node = Node::local("p", "h");
/// # let mut ctx = node.attach(None).unwrap();
/// let got = Choice::new()
///     .on(Pattern::new(Term::atom("ping")), |_, _| "ping")
///     .after(0.5, |_| "quiet")
///     .run(&mut ctx);
/// ```
pub struct Choice<'a, R> {
    arms: Vec<(Pattern, Option<Test<'a>>, Body<'a, R>)>,
    timeout: Option<(Duration, Fallback<'a, R>)>,
}

impl<R> Default for Choice<'_, R> {
    fn default() -> Self {
        Choice { arms: Vec::new(), timeout: None }
    }
}

impl<'a, R> Choice<'a, R> {
    pub fn new() -> Self {
        Choice::default()
    }

    pub fn on(mut self, pattern: Pattern, body: impl FnOnce(&mut Ctx, Received) -> R + 'a) -> Self {
        self.arms.push((pattern, None, Box::new(body)));
        self
    }

    /// An arm that also requires `test` to pass once the pattern unifies.
    pub fn on_if(
        mut self,
        pattern: Pattern,
        test: impl FnMut(&mut ThreadVars) -> bool + 'a,
        body: impl FnOnce(&mut Ctx, Received) -> R + 'a,
    ) -> Self {
        self.arms.push((pattern, Some(Box::new(test)), Box::new(body)));
        self
    }

    /// Runs `body` if nothing matches within `secs` of reaching the end of
    /// the buffer.
    pub fn after(mut self, secs: f64, body: impl FnOnce(&mut Ctx) -> R + 'a) -> Self {
        self.timeout = Some((Duration::from_secs_f64(secs), Box::new(body)));
        self
    }

    /// Fails only when the mailbox is closed.
    pub fn run(self, ctx: &mut Ctx) -> Result<R, RecvError> {
        let mut guards = Vec::with_capacity(self.arms.len());
        let mut bodies = Vec::with_capacity(self.arms.len());
        for (pattern, test, body) in self.arms {
            guards.push(Guard { pattern, test });
            bodies.push(Some(body));
        }
        let timeout = match &self.timeout {
            Some((d, _)) => Timeout::After(*d),
            None => Timeout::Block,
        };
        let opts = RecvOptions::HIGH_LEVEL.with_timeout(timeout);
        let mailbox = ctx.mailbox().clone();
        match mailbox.select(&mut guards, &mut ctx.vars, opts) {
            Ok((i, received)) => {
                drop(guards);
                let body = bodies[i].take().expect("each arm fires once");
                Ok(body(ctx, received))
            }
            Err(RecvError::TimedOut) => match self.timeout {
                Some((_, body)) => Ok(body(ctx)),
                None => Err(RecvError::TimedOut),
            },
            Err(e) => Err(e),
        }
    }
}
