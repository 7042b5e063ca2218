/** Errors carrying the stable core error name in `name`. */

export class PsmError extends Error {
  constructor(coreName: string, message: string) {
    super(message);
    this.name = coreName;
  }
}

const make = (coreName: string) =>
  class extends PsmError {
    constructor(message: string) {
      super(coreName, message);
    }
  };

export const AlreadyExists = make("AlreadyExists");
export const InvalidDesc = make("InvalidDesc");
export const LockHeld = make("LockHeld");
export const NotATable = make("NotATable");
export const CorruptDescriptor = make("CorruptDescriptor");
export const RowOutOfRange = make("RowOutOfRange");
export const TypeMismatch = make("TypeMismatch");
export const ShapeMismatch = make("ShapeMismatch");
export const WrongMode = make("WrongMode");
export const UnknownColumn = make("UnknownColumn");
export const CellNeverWritten = make("CellNeverWritten");
export const IoFailed = make("IoFailed");
export const UnsupportedShape = make("UnsupportedShape");
export const RewriteUnsupported = make("RewriteUnsupported");
export const CoverageGap = make("CoverageGap");
export const OverlapError = make("OverlapError");
export const IndexCorrupt = make("IndexCorrupt");
export const UnsupportedOperation = make("UnsupportedOperation");
