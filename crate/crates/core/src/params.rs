/// Receives every parameter tensor of a model together with its gradient
/// slot, in declaration order.
pub trait ParamVisitor {
    fn visit(&mut self, name: &str, params: &mut [f64], grads: &mut [f64]);
}

impl<F: FnMut(&str, &mut [f64], &mut [f64])> ParamVisitor for F {
    fn visit(&mut self, name: &str, params: &mut [f64], grads: &mut [f64]) {
        self(name, params, grads)
    }
}
