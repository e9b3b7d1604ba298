/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_errorrate_free: (a: number, b: number) => void;
export const __wbg_lattice_free: (a: number, b: number) => void;
export const __wbg_spectrogram_free: (a: number, b: number) => void;
export const ctc_lattice: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const errorrate_n_edits: (a: number) => number;
export const errorrate_n_ref_phones: (a: number) => number;
export const errorrate_per: (a: number) => number;
export const errorrate_per_line: (a: number) => [number, number];
export const lattice_greedy: (a: number) => [number, number];
export const lattice_loss: (a: number) => number;
export const lattice_n_classes: (a: number) => number;
export const lattice_n_frames: (a: number) => number;
export const lattice_posteriors: (a: number) => [number, number];
export const lattice_probs: (a: number) => [number, number];
export const phone_error_rate: (a: number, b: number, c: number, d: number) => [number, number, number];
export const spectrogram_data: (a: number) => [number, number];
export const spectrogram_n_frames: (a: number) => number;
export const spectrogram_n_mels: (a: number) => number;
export const spectrogram_transcript: (a: number) => [number, number];
export const synth_log_mel: (a: number, b: number, c: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
