/* tslint:disable */
/* eslint-disable */
export class Demo {
  free(): void;
  /**
   * Predicted class over the same grid as [`Demo::score_grid`].
   */
  classGrid(x_min: number, x_max: number, y_min: number, y_max: number, nx: number, ny: number): Uint32Array;
  /**
   * Max reciprocal-point distance over an `nx × ny` grid, top row first.
   */
  scoreGrid(x_min: number, x_max: number, y_min: number, y_max: number, nx: number, ny: number): Float64Array;
  epochsDone(): number;
  moveUnknown(x: number, y: number): void;
  constructor(seed: number);
  /**
   * Flat `(fpr, tpr)` pairs.
   */
  roc(): Float64Array;
  tau(): number;
  /**
   * Run `epochs` passes; returns `[epoch, total, ce, margin, fisher, accuracy]`.
   */
  train(epochs: number): Float64Array;
  /**
   * `[precision, recall, f1, auroc, aupr_in, aupr_out, rejected_known, flagged_unknown]`.
   */
  metrics(): Float64Array;
  /**
   * Flat `(x, y, class)` triples; class −1 marks unknown samples.
   */
  samples(): Float64Array;
  setTau(tau: number): void;
  /**
   * Choose τ on the validation cluster; returns it.
   */
  calibrate(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
  readonly memory: WebAssembly.Memory;
  readonly __wbg_demo_free: (a: number, b: number) => void;
  readonly demo_calibrate: (a: number) => [number, number, number];
  readonly demo_classGrid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
  readonly demo_epochsDone: (a: number) => number;
  readonly demo_metrics: (a: number) => [number, number, number, number];
  readonly demo_moveUnknown: (a: number, b: number, c: number) => [number, number];
  readonly demo_new: (a: number) => [number, number, number];
  readonly demo_roc: (a: number) => [number, number, number, number];
  readonly demo_samples: (a: number) => [number, number];
  readonly demo_scoreGrid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
  readonly demo_setTau: (a: number, b: number) => void;
  readonly demo_tau: (a: number) => number;
  readonly demo_train: (a: number, b: number) => [number, number, number, number];
  readonly __wbindgen_export_0: WebAssembly.Table;
  readonly __externref_table_dealloc: (a: number) => void;
  readonly __wbindgen_free: (a: number, b: number, c: number) => void;
  readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;
/**
* Instantiates the given `module`, which can either be bytes or
* a precompiled `WebAssembly.Module`.
*
* @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
*
* @returns {InitOutput}
*/
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
* If `module_or_path` is {RequestInfo} or {URL}, makes a request and
* for everything else, calls `WebAssembly.instantiate` directly.
*
* @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
*
* @returns {Promise<InitOutput>}
*/
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
