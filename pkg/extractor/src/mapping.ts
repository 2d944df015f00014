import * as fs from 'node:fs'

export interface ClassMapping {
  classes: Map<string, { classId: number; taskId: number }>
  classCount: number
}

// mapping file schema:
//   { "classes": { "<folder name>": { "class": 0, "task": 0 }, ... } }
export function loadMapping(filePath: string): ClassMapping {
  const doc = JSON.parse(fs.readFileSync(filePath, 'utf-8'))
  if (typeof doc !== 'object' || doc === null || typeof doc.classes !== 'object') {
    throw new Error(`mapping file ${filePath} must have a 'classes' object`)
  }
  const classes = new Map<string, { classId: number; taskId: number }>()
  let maxClass = -1
  for (const [name, entry] of Object.entries<any>(doc.classes)) {
    if (!Number.isInteger(entry?.class) || !Number.isInteger(entry?.task)) {
      throw new Error(`mapping entry for '${name}' needs integer class and task`)
    }
    classes.set(name, { classId: entry.class, taskId: entry.task })
    maxClass = Math.max(maxClass, entry.class)
  }
  if (classes.size === 0) throw new Error('mapping defines no classes')
  return { classes, classCount: maxClass + 1 }
}
