/**
 * Filesystem object store sharing a directory tree with any other client.
 *
 * put-if-absent writes a temp file in the destination directory and links it
 * into place; the hard link fails if the name is taken, giving exactly one
 * winner among concurrent creators (across processes and languages). Readers
 * therefore never see partial objects. Plain put (watermarks only) replaces
 * atomically via rename.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { randomBytes } from "node:crypto";

import { InvalidKey, NotFound, RangeOutOfBounds } from "./errors.js";

const COMPONENT = /^[A-Za-z0-9._-]+$/;

export function validateKey(key: string): string {
  if (!key || key.startsWith("/")) {
    throw new InvalidKey(`bad key ${JSON.stringify(key)}`);
  }
  for (const part of key.split("/")) {
    if (!COMPONENT.test(part) || part === "..") {
      throw new InvalidKey(`bad component ${JSON.stringify(part)} in key ${key}`);
    }
  }
  return key;
}

export type PutOutcome = "created" | "already_exists";

export class FilesystemStore {
  readonly root: string;

  constructor(root: string) {
    this.root = path.resolve(root);
    fs.mkdirSync(this.root, { recursive: true });
  }

  private pathFor(key: string): string {
    validateKey(key);
    return path.join(this.root, ...key.split("/"));
  }

  private writeTemp(dir: string, data: Uint8Array): string {
    fs.mkdirSync(dir, { recursive: true });
    const tmp = path.join(dir, `.tmp-${randomBytes(8).toString("hex")}`);
    const fd = fs.openSync(tmp, "wx");
    try {
      fs.writeSync(fd, data);
      fs.fsyncSync(fd);
    } finally {
      fs.closeSync(fd);
    }
    return tmp;
  }

  putIfAbsent(key: string, data: Uint8Array): PutOutcome {
    const dest = this.pathFor(key);
    const tmp = this.writeTemp(path.dirname(dest), data);
    try {
      fs.linkSync(tmp, dest);
      return "created";
    } catch (err) {
      if ((err as NodeJS.ErrnoException).code === "EEXIST") {
        return "already_exists";
      }
      throw err;
    } finally {
      fs.unlinkSync(tmp);
    }
  }

  put(key: string, data: Uint8Array): void {
    const dest = this.pathFor(key);
    const tmp = this.writeTemp(path.dirname(dest), data);
    fs.renameSync(tmp, dest);
  }

  get(key: string): Uint8Array {
    try {
      return fs.readFileSync(this.pathFor(key));
    } catch (err) {
      if ((err as NodeJS.ErrnoException).code === "ENOENT") {
        throw new NotFound(key);
      }
      throw err;
    }
  }

  getRange(key: string, offset: number, length: number): Uint8Array {
    const file = this.pathFor(key);
    let size: number;
    try {
      size = fs.statSync(file).size;
    } catch (err) {
      if ((err as NodeJS.ErrnoException).code === "ENOENT") {
        throw new NotFound(key);
      }
      throw err;
    }
    if (offset < 0 || length < 0 || offset + length > size) {
      throw new RangeOutOfBounds(`[${offset}, ${offset + length}) outside ${key} of ${size}`);
    }
    const out = Buffer.alloc(length);
    const fd = fs.openSync(file, "r");
    try {
      let read = 0;
      while (read < length) {
        const n = fs.readSync(fd, out, read, length - read, offset + read);
        if (n === 0) break;
        read += n;
      }
    } finally {
      fs.closeSync(fd);
    }
    return out;
  }

  list(prefix: string): string[] {
    const keys: string[] = [];
    const walk = (dir: string) => {
      let entries: fs.Dirent[];
      try {
        entries = fs.readdirSync(dir, { withFileTypes: true });
      } catch {
        return;
      }
      for (const entry of entries) {
        const full = path.join(dir, entry.name);
        if (entry.isDirectory()) {
          walk(full);
        } else if (!entry.name.startsWith(".tmp-")) {
          const key = path.relative(this.root, full).split(path.sep).join("/");
          if (key.startsWith(prefix)) keys.push(key);
        }
      }
    };
    walk(this.root);
    return keys.sort();
  }

  delete(key: string): void {
    try {
      fs.unlinkSync(this.pathFor(key));
    } catch (err) {
      if ((err as NodeJS.ErrnoException).code !== "ENOENT") throw err;
    }
  }

  size(key: string): number {
    try {
      return fs.statSync(this.pathFor(key)).size;
    } catch (err) {
      if ((err as NodeJS.ErrnoException).code === "ENOENT") {
        throw new NotFound(key);
      }
      throw err;
    }
  }

  exists(key: string): boolean {
    try {
      this.size(key);
      return true;
    } catch {
      return false;
    }
  }
}
