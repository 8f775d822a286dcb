# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

import argparse
import copy
import hashlib
import json
import logging as log
import pathlib

import hjson
from jsonref import JsonRef
from jsonschema import Draft7Validator, RefResolver, ValidationError, validators

from .core import HISTORY_CAP
from .errors import ConfigError


# Fill in default values for config values which do not have a user-defined value.
def extend_with_default(validator_class):
    validate_properties = validator_class.VALIDATORS["properties"]

    def set_defaults(validator, properties, instance, schema):
        if isinstance(instance, dict):
            for property, subschema in properties.items():
                if "default" in subschema:
                    instance.setdefault(property, copy.deepcopy(subschema["default"]))

        for error in validate_properties(
                validator,
                properties,
                instance,
                schema,
        ):
            yield error

    return validators.extend(
        validator_class,
        {"properties": set_defaults},
    )


DefaultValidatingDraft7Validator = extend_with_default(Draft7Validator)

SCHEMA_DIR = pathlib.Path(__file__).parent / "../../docs/schema"


def read_schema(path):
    """Read a single schema file and return the parsed JSON content."""
    with open(path, "r") as f:
        try:
            return json.load(f)
        except json.decoder.JSONDecodeError as e:
            raise ConfigError("Invalid schema file {}: {}".format(path, e))


class SchemaValidator(object):
    """
    Validates documents against one of the schemas in `docs/schema` and fills
    in defaults. Remote `$ref`s resolve against the local schema directory.
    """
    def __init__(self, root_schema):
        self.root_schema = read_schema(SCHEMA_DIR / root_schema)
        store_set = dict()
        # Map remote schema URLs to the local copies.
        for path in sorted(SCHEMA_DIR.iterdir()):
            if path.suffix != ".json":
                continue
            schema = read_schema(path)
            store_set[schema["$id"]] = schema
        self.resolver = RefResolver.from_schema(self.root_schema,
                                                store=store_set)

    def validate(self, cfg):
        try:
            DefaultValidatingDraft7Validator(
                self.root_schema, resolver=self.resolver).validate(cfg)
        except ValidationError as e:
            raise ConfigError("Configuration rejected at {}: {}".format(
                "/".join(str(p) for p in e.absolute_path) or "<root>",
                e.message))
        return cfg


def parse_hjson(text):
    try:
        obj = hjson.loads(text)
        obj = JsonRef.replace_refs(obj)
    except ValueError as e:
        raise ConfigError("Unable to parse configuration: {}".format(e))
    # Materialize the proxies so the config is a plain, deep-copyable tree.
    return json.loads(json.dumps(obj))


def define_arg_type(arg):
    """Sanity-check and return a config override of the form key=value."""
    if "=" not in arg:
        raise argparse.ArgumentTypeError(
            "unable to parse {!r}: configuration overrides must be in the form key=value".format(arg))
    key, value = arg.split("=", 1)
    try:
        value = hjson.loads(value)
    except ValueError:
        pass
    return (key.strip(), value)


def apply_overrides(cfg, overrides):
    """Apply `some.key=value` overrides to the raw configuration in place."""
    for key, value in overrides:
        log.info("Overriding configuration key {!r} with value {!r}".format(
            key, value))
        ref = cfg
        split_keys = key.split(".")
        for key_part in split_keys[:-1]:
            if key_part not in ref:
                ref[key_part] = {}
            ref = ref[key_part]
            if not isinstance(ref, dict):
                raise ConfigError("Cannot override {!r}: {!r} is not a section".format(key, key_part))
        ref[split_keys[-1]] = value
    return cfg


class RunConfig(object):
    """
    A complete, validated run configuration.

    The constructor fills every default from the schema and performs the
    semantic checks the schema cannot express.
    """
    validator = None

    def __init__(self, cfg=None, overrides=()):
        if RunConfig.validator is None:
            RunConfig.validator = SchemaValidator("tirrlab.schema.json")
        cfg = apply_overrides(copy.deepcopy(cfg or {}), overrides)
        self.cfg = self.validator.validate(cfg)
        if self.cfg_validate():
            raise ConfigError("Failed parameter validation.")

    @classmethod
    def from_file(cls, file, overrides=()):
        with file:
            return cls(parse_hjson(file.read()), overrides)

    def __getitem__(self, key):
        return self.cfg[key]

    @property
    def max_age(self):
        age = self.cfg["history"]["max_age"]
        return self.cfg["world"]["year_ticks"] if age is None else age

    def cfg_validate(self):
        """Perform more advanced validation, i.e., sanity check parameters."""
        failed = True
        fractions = self.cfg["split"]["fractions"]
        if abs(sum(fractions) - 1.0) > 1e-9:
            log.error("Split fractions must sum to 1, got {}".format(sum(fractions)))
        elif self.cfg["siamese"]["loss"]["margin"] <= 0:
            log.error("The contrastive margin must be positive.")
        elif self.cfg["siamese"]["loss"]["epsilon"] <= 0:
            log.error("The BCE clipping epsilon must be positive.")
        elif self.cfg["history"]["cap"] > HISTORY_CAP:
            log.error("`history.cap` may not exceed the sequence length of {}.".format(HISTORY_CAP))
        elif not 0 <= self.cfg["tirr"]["dropout"] < 1:
            log.error("The TIRR dropout rate must lie in [0, 1).")
        elif self.cfg["history"]["max_age"] is not None and self.cfg["history"]["max_age"] < 1:
            log.error("`history.max_age` must be at least one tick.")
        else:
            failed = False

        # Warnings
        if self.cfg["history"]["cap"] != HISTORY_CAP:
            log.warning("History cap differs from the sequence length of {}.".format(HISTORY_CAP))
        return failed

    def to_json(self):
        return json.dumps(self.cfg, sort_keys=True, indent=4)

    def digest(self):
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()
