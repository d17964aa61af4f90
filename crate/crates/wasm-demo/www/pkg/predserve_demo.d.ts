/* tslint:disable */
/* eslint-disable */

/**
 * Batch sizing under saturated load for `seconds` of virtual time.
 *
 * Rows of 4: `start_ms, batch_size, latency_ms, max_batch`.
 */
export function batch_trace(fixed_ms: number, per_item_ms: number, slo_ms: number, strategy_name: string, seconds: number, seed: bigint): Float64Array;

/**
 * Hit rate of the prediction cache on a Zipf stream, for each capacity.
 *
 * Rows of 2: `capacity, hit_rate`.
 */
export function cache_hit_rates(exponent: number, universe: bigint, queries: bigint, capacities: Uint32Array, seed: bigint): Float64Array;

/**
 * Cumulative error of five static models, Exp3 and Exp4 while the best
 * model degrades to `degraded_rate` for queries 5000..10000.
 *
 * Rows of 8: `query, static_0..static_4, exp3, exp4`.
 */
export function failure_curves(eta: number, degraded_rate: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly batch_trace: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
    readonly cache_hit_rates: (a: number, b: bigint, c: bigint, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly failure_curves: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
