/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_get_promptknobs_color: (a: number) => number;
export const __wbg_get_promptknobs_pattern: (a: number) => number;
export const __wbg_get_promptknobs_scale: (a: number) => number;
export const __wbg_get_promptknobs_shear: (a: number) => number;
export const __wbg_get_promptknobs_theta: (a: number) => number;
export const __wbg_get_promptknobs_tx: (a: number) => number;
export const __wbg_get_promptknobs_ty: (a: number) => number;
export const __wbg_promptknobs_free: (a: number, b: number) => void;
export const __wbg_rendered_free: (a: number, b: number) => void;
export const __wbg_set_promptknobs_color: (a: number, b: number) => void;
export const __wbg_set_promptknobs_pattern: (a: number, b: number) => void;
export const __wbg_set_promptknobs_scale: (a: number, b: number) => void;
export const __wbg_set_promptknobs_shear: (a: number, b: number) => void;
export const __wbg_set_promptknobs_theta: (a: number, b: number) => void;
export const __wbg_set_promptknobs_tx: (a: number, b: number) => void;
export const __wbg_set_promptknobs_ty: (a: number, b: number) => void;
export const augment_kinds: () => [number, number];
export const corruption_kinds: () => [number, number];
export const demo_augment: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const demo_corrupt: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const demo_new: (a: number, b: number, c: number) => [number, number, number];
export const demo_original: (a: number) => [number, number];
export const demo_prompt: (a: number, b: number) => [number, number, number];
export const promptknobs_new: () => number;
export const rendered_mask_fraction: (a: number) => number;
export const rendered_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
