/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_calibrate: (a: number) => [number, number, number];
export const demo_classGrid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const demo_epochsDone: (a: number) => number;
export const demo_metrics: (a: number) => [number, number, number, number];
export const demo_moveUnknown: (a: number, b: number, c: number) => [number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_roc: (a: number) => [number, number, number, number];
export const demo_samples: (a: number) => [number, number];
export const demo_scoreGrid: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const demo_setTau: (a: number, b: number) => void;
export const demo_tau: (a: number) => number;
export const demo_train: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_export_0: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
