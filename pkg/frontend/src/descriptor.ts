/** The table.desc grammar (LF-terminated ASCII lines). */

import { CorruptDescriptor, InvalidDesc, UnknownColumn } from "./errors.js";
import { ElementType, ETYPES, ShapePolicy } from "./dtypes.js";

export type Manager = "tiled" | "pseg";

export interface ColumnDesc {
  name: string;
  etype: ElementType;
  shape: ShapePolicy;
  manager: Manager;
}

export interface TableDesc {
  columns: ColumnDesc[];
  nrows: number;
}

export const MAGIC_LINE = "PSMTABLE 1";

function validName(name: string): boolean {
  if (name.length < 1 || name.length > 64) return false;
  return [...name].every((ch) => {
    const c = ch.charCodeAt(0);
    return c >= 0x21 && c <= 0x7e;
  });
}

export function validateDesc(desc: TableDesc): void {
  if (desc.columns.length === 0) throw new InvalidDesc("a table needs at least one column");
  if (desc.nrows < 0) throw new InvalidDesc(`nrows must be >= 0, got ${desc.nrows}`);
  const seen = new Set<string>();
  for (const col of desc.columns) {
    if (!validName(col.name)) throw new InvalidDesc(`bad column name ${col.name}`);
    if (seen.has(col.name)) throw new InvalidDesc(`duplicate column name ${col.name}`);
    seen.add(col.name);
  }
}

function shapeToken(policy: ShapePolicy): [number, string] {
  if (policy.kind === "scalar") return [0, "-"];
  if (policy.kind === "fixed")
    return [policy.extents.length, policy.extents.join(",")];
  return [policy.ndim, "var"];
}

export function formatDesc(desc: TableDesc): string {
  validateDesc(desc);
  const lines = [MAGIC_LINE, `nrows ${desc.nrows}`];
  for (const col of desc.columns) {
    const [ndim, shape] = shapeToken(col.shape);
    lines.push(`column ${col.name} ${col.etype} ${ndim} ${shape} ${col.manager}`);
  }
  return lines.join("\n") + "\n";
}

export function parseDesc(text: string): TableDesc {
  const lines = text.split("\n");
  if (lines[lines.length - 1] === "") lines.pop();
  if (lines.length < 2 || lines[0] !== MAGIC_LINE)
    throw new CorruptDescriptor("missing PSMTABLE magic line");
  const head = lines[1].split(" ");
  if (head.length !== 2 || head[0] !== "nrows" || !/^\d+$/.test(head[1]))
    throw new CorruptDescriptor(`bad nrows line: ${lines[1]}`);
  const nrows = Number(head[1]);
  const columns: ColumnDesc[] = [];
  for (const line of lines.slice(2)) {
    const parts = line.split(" ");
    if (parts.length !== 6 || parts[0] !== "column")
      throw new CorruptDescriptor(`bad column line: ${line}`);
    const [, name, etok, ndimTok, shapeTok, manager] = parts;
    if (!ETYPES.includes(etok as ElementType))
      throw new CorruptDescriptor(`unknown element type ${etok}`);
    if (manager !== "tiled" && manager !== "pseg")
      throw new CorruptDescriptor(`unknown manager ${manager}`);
    const ndim = Number(ndimTok);
    let shape: ShapePolicy;
    if (ndim === 0) {
      if (shapeTok !== "-") throw new CorruptDescriptor(`bad scalar shape ${shapeTok}`);
      shape = { kind: "scalar" };
    } else if (shapeTok === "var") {
      shape = { kind: "variable", ndim };
    } else {
      const extents = shapeTok.split(",").map(Number);
      if (extents.length !== ndim || extents.some((e) => !Number.isInteger(e) || e < 1))
        throw new CorruptDescriptor(`bad shape ${shapeTok}`);
      shape = { kind: "fixed", extents };
    }
    columns.push({ name, etype: etok as ElementType, shape, manager });
  }
  if (columns.length === 0) throw new CorruptDescriptor("descriptor lists no columns");
  const desc = { columns, nrows };
  try {
    validateDesc(desc);
  } catch (exc) {
    throw new CorruptDescriptor(String(exc));
  }
  return desc;
}

export function columnOf(desc: TableDesc, name: string): ColumnDesc {
  const col = desc.columns.find((c) => c.name === name);
  if (!col) throw new UnknownColumn(name);
  return col;
}

export function columnId(desc: TableDesc, name: string): number {
  const id = desc.columns.findIndex((c) => c.name === name);
  if (id < 0) throw new UnknownColumn(name);
  return id;
}
