/** Element types, shape policies and cell values (little-endian throughout). */

import { InvalidDesc, ShapeMismatch } from "./errors.js";

export type ElementType = "bool" | "i32" | "i64" | "f32" | "f64" | "c64" | "c128";

export const ETYPES: readonly ElementType[] = [
  "bool",
  "i32",
  "i64",
  "f32",
  "f64",
  "c64",
  "c128",
];

export const WIDTHS: Record<ElementType, number> = {
  bool: 1,
  i32: 4,
  i64: 8,
  f32: 4,
  f64: 8,
  c64: 8,
  c128: 16,
};

/** real lanes per element in the flat typed-array view (2 for complex) */
export const LANES: Record<ElementType, number> = {
  bool: 1,
  i32: 1,
  i64: 1,
  f32: 1,
  f64: 1,
  c64: 2,
  c128: 2,
};

export type CellData =
  | Uint8Array
  | Int32Array
  | BigInt64Array
  | Float32Array
  | Float64Array;

export function etypeTag(etype: ElementType): number {
  const tag = ETYPES.indexOf(etype);
  if (tag < 0) throw new InvalidDesc(`unknown element type ${etype}`);
  return tag;
}

export function etypeFromTag(tag: number): ElementType {
  const etype = ETYPES[tag];
  if (etype === undefined) throw new InvalidDesc(`unknown element type tag ${tag}`);
  return etype;
}

export type ShapePolicy =
  | { kind: "scalar" }
  | { kind: "fixed"; extents: number[] }
  | { kind: "variable"; ndim: number };

export function policyConforms(policy: ShapePolicy, shape: number[]): boolean {
  if (policy.kind === "scalar") return shape.length === 0;
  if (policy.kind === "fixed")
    return (
      shape.length === policy.extents.length &&
      shape.every((e, i) => e === policy.extents[i])
    );
  return shape.length === policy.ndim && shape.every((e) => e >= 1);
}

export function prod(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function cellBytes(etype: ElementType, shape: number[]): number {
  return WIDTHS[etype] * prod(shape);
}

/** One cell: flat row-major data (complex values interleave re,im). */
export interface CellValue {
  etype: ElementType;
  shape: number[];
  data: CellData;
}

export function decodeCell(
  etype: ElementType,
  shape: number[],
  buf: Buffer
): CellValue {
  const expected = cellBytes(etype, shape);
  if (buf.length !== expected)
    throw new ShapeMismatch(`payload is ${buf.length} bytes, expected ${expected}`);
  // copy out of the Buffer pool so typed-array alignment always holds
  const bytes = new Uint8Array(buf);
  const ab = bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.length);
  const lanes = prod(shape) * LANES[etype];
  let data: CellData;
  switch (etype) {
    case "bool":
      data = new Uint8Array(ab);
      break;
    case "i32":
      data = new Int32Array(ab);
      break;
    case "i64":
      data = new BigInt64Array(ab);
      break;
    case "f32":
    case "c64":
      data = new Float32Array(ab);
      break;
    case "f64":
    case "c128":
      data = new Float64Array(ab);
      break;
  }
  if (data.length !== lanes)
    throw new ShapeMismatch(`decoded ${data.length} lanes, expected ${lanes}`);
  return { etype, shape, data };
}

export function encodeCell(cell: CellValue): Buffer {
  const lanes = prod(cell.shape) * LANES[cell.etype];
  if (cell.data.length !== lanes)
    throw new ShapeMismatch(
      `data has ${cell.data.length} lanes, shape [${cell.shape}] needs ${lanes}`
    );
  return Buffer.from(cell.data.buffer, cell.data.byteOffset, cell.data.byteLength);
}
