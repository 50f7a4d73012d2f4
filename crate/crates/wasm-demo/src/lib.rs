//! Browser bindings for the open-set playground.
//!
//! Build with `wasm-bindgen --target web` and open `www/index.html`.

pub mod playground;

use wasm_bindgen::prelude::*;

use playground::Playground;

fn js_err(e: rpmnet_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    inner: Playground,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        Ok(Demo {
            inner: Playground::new(seed as u64).map_err(js_err)?,
        })
    }

    /// Run `epochs` passes; returns `[epoch, total, ce, margin, fisher, accuracy]`.
    pub fn train(&mut self, epochs: u32) -> Result<Vec<f64>, JsError> {
        Ok(match self.inner.train(epochs as usize).map_err(js_err)? {
            Some(r) => vec![
                r.epoch as f64,
                r.loss.total,
                r.loss.ce,
                r.loss.margin,
                r.loss.fisher,
                r.accuracy,
            ],
            None => Vec::new(),
        })
    }

    #[wasm_bindgen(js_name = epochsDone)]
    pub fn epochs_done(&self) -> u32 {
        self.inner.epochs_done() as u32
    }

    #[wasm_bindgen(js_name = moveUnknown)]
    pub fn move_unknown(&mut self, x: f64, y: f64) -> Result<(), JsError> {
        self.inner.move_unknown(x, y).map_err(js_err)
    }

    /// Flat `(x, y, class)` triples; class −1 marks unknown samples.
    pub fn samples(&self) -> Vec<f64> {
        self.inner.samples()
    }

    /// Max reciprocal-point distance over an `nx × ny` grid, top row first.
    #[wasm_bindgen(js_name = scoreGrid)]
    pub fn score_grid(&self, x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: u32, ny: u32) -> Result<Vec<f64>, JsError> {
        Ok(self
            .inner
            .grid(x_min, x_max, y_min, y_max, nx as usize, ny as usize)
            .map_err(js_err)?
            .0)
    }

    /// Predicted class over the same grid as [`Demo::score_grid`].
    #[wasm_bindgen(js_name = classGrid)]
    pub fn class_grid(&self, x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: u32, ny: u32) -> Result<Vec<u32>, JsError> {
        Ok(self
            .inner
            .grid(x_min, x_max, y_min, y_max, nx as usize, ny as usize)
            .map_err(js_err)?
            .1
            .into_iter()
            .map(|c| c as u32)
            .collect())
    }

    /// Choose τ on the validation cluster; returns it.
    pub fn calibrate(&mut self) -> Result<f64, JsError> {
        Ok(self.inner.calibrate().map_err(js_err)?.tau)
    }

    #[wasm_bindgen(js_name = setTau)]
    pub fn set_tau(&mut self, tau: f64) {
        self.inner.set_tau(tau);
    }

    pub fn tau(&self) -> f64 {
        self.inner.tau()
    }

    /// `[precision, recall, f1, auroc, aupr_in, aupr_out, rejected_known, flagged_unknown]`.
    pub fn metrics(&self) -> Result<Vec<f64>, JsError> {
        let r = self.inner.report().map_err(js_err)?;
        let os = r.open_set.expect("unknown cluster is never empty");
        Ok(vec![
            r.precision,
            r.recall,
            r.f1_score,
            os.auroc,
            os.aupr_in,
            os.aupr_out,
            r.rejected_known as f64 / r.known_count as f64,
            r.flagged_unknown as f64 / r.unknown_count as f64,
        ])
    }

    /// Flat `(fpr, tpr)` pairs.
    pub fn roc(&self) -> Result<Vec<f64>, JsError> {
        Ok(self.inner.roc().map_err(js_err)?.into_iter().flatten().collect())
    }
}
