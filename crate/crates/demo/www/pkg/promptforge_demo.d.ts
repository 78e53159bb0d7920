/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    augment(kind: string, bin: number, negate: boolean): Uint8Array;
    corrupt(kind: string, severity: number, seed: number): Uint8Array;
    constructor(label: number, size: number, seed: number);
    original(): Uint8Array;
    prompt(knobs: PromptKnobs): Rendered;
}

/**
 * Slider positions for the prompt panel. Affine entries are raw values
 * before squashing; `color` is the raw colour value shared by every pixel.
 */
export class PromptKnobs {
    free(): void;
    [Symbol.dispose](): void;
    constructor();
    color: number;
    /**
     * Amplitude of the additive pattern on the masked border.
     */
    pattern: number;
    scale: number;
    shear: number;
    theta: number;
    tx: number;
    ty: number;
}

/**
 * Result of one prompt render.
 */
export class Rendered {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    rgba(): Uint8Array;
    readonly mask_fraction: number;
}

/**
 * Names accepted by [`Demo::augment`], comma separated.
 */
export function augment_kinds(): string;

export function corruption_kinds(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_get_promptknobs_color: (a: number) => number;
    readonly __wbg_get_promptknobs_pattern: (a: number) => number;
    readonly __wbg_get_promptknobs_scale: (a: number) => number;
    readonly __wbg_get_promptknobs_shear: (a: number) => number;
    readonly __wbg_get_promptknobs_theta: (a: number) => number;
    readonly __wbg_get_promptknobs_tx: (a: number) => number;
    readonly __wbg_get_promptknobs_ty: (a: number) => number;
    readonly __wbg_promptknobs_free: (a: number, b: number) => void;
    readonly __wbg_rendered_free: (a: number, b: number) => void;
    readonly __wbg_set_promptknobs_color: (a: number, b: number) => void;
    readonly __wbg_set_promptknobs_pattern: (a: number, b: number) => void;
    readonly __wbg_set_promptknobs_scale: (a: number, b: number) => void;
    readonly __wbg_set_promptknobs_shear: (a: number, b: number) => void;
    readonly __wbg_set_promptknobs_theta: (a: number, b: number) => void;
    readonly __wbg_set_promptknobs_tx: (a: number, b: number) => void;
    readonly __wbg_set_promptknobs_ty: (a: number, b: number) => void;
    readonly augment_kinds: () => [number, number];
    readonly corruption_kinds: () => [number, number];
    readonly demo_augment: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_corrupt: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_original: (a: number) => [number, number];
    readonly demo_prompt: (a: number, b: number) => [number, number, number];
    readonly promptknobs_new: () => number;
    readonly rendered_mask_fraction: (a: number) => number;
    readonly rendered_rgba: (a: number) => [number, number];
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
