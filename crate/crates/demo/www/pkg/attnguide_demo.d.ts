/* tslint:disable */
/* eslint-disable */

/**
 * A small model trained in place, one epoch per call.
 */
export class Session {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Greedy decode of an input like `010 t3 t5`, with the attention row
     * of every decoder step and the correct output.
     */
    decode(input: string): string;
    constructor(data_seed: number, model_seed: number, guided: boolean, hidden: number);
    task(): string;
    /**
     * One pass over the training split with batch size 1; returns the
     * mean loss and the accuracy on every split.
     */
    train_epoch(): string;
}

/**
 * Tables, split sizes and a few examples per split for `seed`.
 */
export function generate_task(seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly generate_task: (a: number) => [number, number];
    readonly session_decode: (a: number, b: number, c: number) => [number, number, number, number];
    readonly session_new: (a: number, b: number, c: number, d: number) => number;
    readonly session_task: (a: number) => [number, number];
    readonly session_train_epoch: (a: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
